//! Fits per-video and per-scan similarity transforms from PnP anchors, maps
//! relative reconstructions into scan coordinates, fuses the resulting pose
//! tables, filters outliers against the scan bounds, and snaps stray points to
//! the scan.
//!
//! Anchor correspondences use camera centers only: the transform is fitted on
//! point sets, and frame rotations are carried along by composing the fitted
//! rotation.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Box3, Pose, Sim3Transform};
use crate::procrustes::{
    solve_robust_procrustes, CorrespondenceSet3D, ProcrustesError, RobustAlignConfig,
};

pub type VideoId = String;
pub type FrameId = u64;
pub type ScanId = String;

/// Key of a single egocentric frame across the whole dataset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameKey {
    pub video_id: VideoId,
    pub frame_id: FrameId,
}

impl FrameKey {
    pub fn new(video_id: impl Into<VideoId>, frame_id: FrameId) -> Self {
        FrameKey { video_id: video_id.into(), frame_id }
    }
}

/// How a world pose was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Pnp,
    PnpTemporal,
    VideoProcrustes,
    ScanProcrustes,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Provenance::Pnp => "pnp",
            Provenance::PnpTemporal => "pnp-temporal",
            Provenance::VideoProcrustes => "video-procrustes",
            Provenance::ScanProcrustes => "scan-procrustes",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Provenance {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pnp" => Ok(Provenance::Pnp),
            "pnp-temporal" => Ok(Provenance::PnpTemporal),
            "video-procrustes" => Ok(Provenance::VideoProcrustes),
            "scan-procrustes" => Ok(Provenance::ScanProcrustes),
            other => Err(format!("unknown provenance '{other}'")),
        }
    }
}

/// A world-frame camera pose with provenance and validity flags. Outliers stay
/// valid; the flag only marks them for downstream consumers.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEntry {
    pub pose: Pose,
    pub provenance: Provenance,
    pub valid: bool,
    pub outlier: bool,
}

impl PoseEntry {
    pub fn valid(pose: Pose, provenance: Provenance) -> Self {
        PoseEntry { pose, provenance, valid: true, outlier: false }
    }

    /// Valid and not flagged as an outlier; the condition under which a pose
    /// counts for recall and predictions.
    pub fn usable(&self) -> bool {
        self.valid && !self.outlier
    }
}

/// Per-frame world-coordinate camera poses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoseTable {
    entries: BTreeMap<FrameKey, PoseEntry>,
}

impl PoseTable {
    pub fn new() -> Self {
        PoseTable::default()
    }

    pub fn insert(&mut self, key: FrameKey, entry: PoseEntry) {
        self.entries.insert(key, entry);
    }

    pub fn get(&self, key: &FrameKey) -> Option<&PoseEntry> {
        self.entries.get(key)
    }

    pub fn usable_pose(&self, key: &FrameKey) -> Option<&Pose> {
        self.entries.get(key).filter(|e| e.usable()).map(|e| &e.pose)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FrameKey, &PoseEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.entries.values().filter(|e| e.valid).count()
    }

    pub fn usable_count(&self) -> usize {
        self.entries.values().filter(|e| e.usable()).count()
    }

    /// Keys of valid frames belonging to one video.
    pub fn video_frames(&self, video_id: &str) -> Vec<FrameId> {
        self.entries
            .iter()
            .filter(|(k, e)| k.video_id == video_id && e.valid)
            .map(|(k, _)| k.frame_id)
            .collect()
    }
}

impl FromIterator<(FrameKey, PoseEntry)> for PoseTable {
    fn from_iter<T: IntoIterator<Item = (FrameKey, PoseEntry)>>(iter: T) -> Self {
        PoseTable { entries: iter.into_iter().collect() }
    }
}

/// Where a sparse reconstruction came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReconstructionSource {
    Video { video_id: VideoId },
    ScanMerge { scan_id: ScanId, device_id: String },
}

/// A single frame of a sparse reconstruction: its relative-frame pose and the
/// camera it was taken with.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconFrame {
    pub pose: Pose,
    pub camera_id: u32,
    /// World-to-camera wire values `(qw qx qy qz, tx ty tz)` retained from
    /// parsing. Re-serialization replays them verbatim, which keeps text
    /// round trips lossless; frames built programmatically carry `None`.
    pub raw_extrinsics: Option<([f64; 4], [f64; 3])>,
}

impl ReconFrame {
    pub fn new(pose: Pose, camera_id: u32) -> Self {
        ReconFrame { pose, camera_id, raw_extrinsics: None }
    }
}

/// A relative-coordinate SfM model: per-frame camera-to-world poses and sparse
/// 3D points, all in an arbitrary similarity frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseReconstruction {
    pub frames: BTreeMap<FrameKey, ReconFrame>,
    pub points3d: Vec<Vector3<f64>>,
    pub source: ReconstructionSource,
}

impl SparseReconstruction {
    pub fn new(source: ReconstructionSource) -> Self {
        SparseReconstruction { frames: BTreeMap::new(), points3d: Vec::new(), source }
    }
}

/// Scan vertices plus derived axis-aligned bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGeometry {
    pub scan_id: ScanId,
    pub vertices: Vec<Vector3<f64>>,
    pub bounds: Box3,
}

impl ScanGeometry {
    /// Derives the bounds from the vertex list. At least one vertex is
    /// required.
    pub fn new(scan_id: impl Into<ScanId>, vertices: Vec<Vector3<f64>>) -> Result<Self, RegistrationError> {
        if vertices.is_empty() {
            return Err(RegistrationError::EmptyScan);
        }
        let mut min = vertices[0];
        let mut max = vertices[0];
        for v in &vertices {
            min = min.inf(v);
            max = max.sup(v);
        }
        Ok(ScanGeometry { scan_id: scan_id.into(), vertices, bounds: Box3::from_min_max(min, max) })
    }
}

/// Fusion precedence over provenance values, plus the residual gate above
/// which a fitted transform is not trusted at all.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionPolicy {
    pub order: Vec<Provenance>,
    /// Maximum mean anchor residual (meters) for a fitted transform to be
    /// trusted.
    pub residual_gate: f64,
}

impl Default for FusionPolicy {
    fn default() -> Self {
        FusionPolicy {
            order: vec![
                Provenance::VideoProcrustes,
                Provenance::ScanProcrustes,
                Provenance::Pnp,
                Provenance::PnpTemporal,
            ],
            residual_gate: 0.5,
        }
    }
}

impl FusionPolicy {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        if self.order.is_empty() {
            return Err(RegistrationError::InvalidPolicy { reason: "empty fusion order".into() });
        }
        for (i, p) in self.order.iter().enumerate() {
            if self.order[..i].contains(p) {
                return Err(RegistrationError::InvalidPolicy {
                    reason: format!("duplicate provenance '{p}' in fusion order"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("insufficient anchors: {found} common frames, need at least 3")]
    InsufficientAnchors { found: usize },
    #[error(transparent)]
    Procrustes(#[from] ProcrustesError),
    #[error("scan has no vertices")]
    EmptyScan,
    #[error("invalid fusion policy: {reason}")]
    InvalidPolicy { reason: String },
    #[error("video '{video_id}' appears in the pose table but not in the totals")]
    UnknownVideo { video_id: VideoId },
}

/// Fit summary returned alongside the transform.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationDiagnostics {
    pub anchor_count: usize,
    pub inlier_count: usize,
    /// Mean inlier residual in the scan frame, meters.
    pub mean_residual: f64,
}

/// Fits the similarity transform that maps the reconstruction's camera centers
/// onto the anchor poses' centers. Realizes the per-video transform when the
/// reconstruction source is a video and the per-scan transform when it is a
/// scan merge.
pub fn fit_registration(
    recon: &SparseReconstruction,
    anchors: &PoseTable,
    cfg: &RobustAlignConfig,
) -> Result<(Sim3Transform, RegistrationDiagnostics), RegistrationError> {
    let mut source = Vec::new();
    let mut target = Vec::new();
    for (key, frame) in &recon.frames {
        if let Some(anchor) = anchors.usable_pose(key) {
            source.push(frame.pose.camera_center());
            target.push(anchor.camera_center());
        }
    }
    let anchor_count = source.len();
    if anchor_count < 3 {
        return Err(RegistrationError::InsufficientAnchors { found: anchor_count });
    }

    let correspondences = CorrespondenceSet3D::new(source.clone(), target.clone())
        .map_err(RegistrationError::Procrustes)?;
    let (transform, mask) = solve_robust_procrustes(&correspondences, cfg)?;

    let mut inlier_count = 0;
    let mut residual_sum = 0.0;
    for (i, is_inlier) in mask.iter().enumerate() {
        if *is_inlier {
            inlier_count += 1;
            residual_sum += (transform.transform_point(&source[i]) - target[i]).norm();
        }
    }
    let mean_residual = if inlier_count > 0 { residual_sum / inlier_count as f64 } else { f64::INFINITY };
    Ok((transform, RegistrationDiagnostics { anchor_count, inlier_count, mean_residual }))
}

/// Maps every frame of the reconstruction into the scan frame: centers through
/// the transform, rotations by composing the fitted rotation (scale does not
/// affect rotations).
pub fn apply_registration(
    recon: &SparseReconstruction,
    t: &Sim3Transform,
    provenance: Provenance,
) -> PoseTable {
    recon
        .frames
        .iter()
        .map(|(key, frame)| {
            let pose = Pose::new(
                t.rotation.compose(&frame.pose.rotation),
                t.transform_point(&frame.pose.camera_center()),
            );
            (key.clone(), PoseEntry::valid(pose, provenance))
        })
        .collect()
}

/// Merges pose tables frame by frame: the first valid entry whose provenance
/// comes earliest in `policy.order` wins; a frame is valid in the output iff
/// it is valid in at least one input.
pub fn fuse(tables: &[PoseTable], policy: &FusionPolicy) -> PoseTable {
    let mut keys: Vec<FrameKey> = Vec::new();
    for table in tables {
        for (key, _) in table.iter() {
            keys.push(key.clone());
        }
    }
    keys.sort();
    keys.dedup();

    let mut out = PoseTable::new();
    for key in keys {
        let mut winner: Option<&PoseEntry> = None;
        'search: for provenance in &policy.order {
            for table in tables {
                if let Some(entry) = table.get(&key) {
                    if entry.valid && entry.provenance == *provenance {
                        winner = Some(entry);
                        break 'search;
                    }
                }
            }
        }
        // Provenances missing from the order list still count for validity.
        if winner.is_none() {
            winner = tables.iter().find_map(|t| t.get(&key).filter(|e| e.valid));
        }
        let entry = winner
            .cloned()
            .or_else(|| tables.iter().find_map(|t| t.get(&key).cloned()));
        if let Some(entry) = entry {
            out.insert(key, entry);
        }
    }
    out
}

/// Flags entries whose camera center falls outside the scan bounds inflated by
/// `margin`. Pose values are never changed; returns the new table and the
/// number of entries flagged.
pub fn filter_outliers(table: &PoseTable, scan: &ScanGeometry, margin: f64) -> (PoseTable, usize) {
    let (min, max) = scan.bounds.aabb();
    let min = min - Vector3::repeat(margin);
    let max = max + Vector3::repeat(margin);
    let mut flagged = 0;
    let out = table
        .iter()
        .map(|(key, entry)| {
            let mut entry = entry.clone();
            if entry.valid {
                let c = entry.pose.camera_center();
                let inside = (min.x..=max.x).contains(&c.x)
                    && (min.y..=max.y).contains(&c.y)
                    && (min.z..=max.z).contains(&c.z);
                if !inside {
                    entry.outlier = true;
                    flagged += 1;
                }
            }
            (key.clone(), entry)
        })
        .collect();
    (out, flagged)
}

/// Points inside the scan bounds pass through unchanged; points outside are
/// replaced by the nearest scan vertex (ties broken by lowest vertex index).
pub fn apply_3d_constraints(points: &[Vector3<f64>], scan: &ScanGeometry) -> Vec<Vector3<f64>> {
    points
        .iter()
        .map(|p| {
            if scan.bounds.contains(p) {
                *p
            } else {
                nearest_vertex(&scan.vertices, p)
            }
        })
        .collect()
}

fn nearest_vertex(vertices: &[Vector3<f64>], p: &Vector3<f64>) -> Vector3<f64> {
    let mut best = vertices[0];
    let mut best_d2 = (vertices[0] - p).norm_squared();
    for v in &vertices[1..] {
        let d2 = (v - p).norm_squared();
        if d2 < best_d2 {
            best = *v;
            best_d2 = d2;
        }
    }
    best
}

/// Recall rates as percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub frame_rate_pct: f64,
    pub video_rate_pct: f64,
}

/// Fraction of frames (and of videos with at least one frame) carrying a
/// valid, non-outlier pose. `totals` gives the full frame count per video and
/// must cover every video present in the table.
pub fn pose_recall(
    table: &PoseTable,
    totals: &BTreeMap<VideoId, u64>,
) -> Result<RecallReport, RegistrationError> {
    let mut usable_per_video: BTreeMap<&str, u64> = BTreeMap::new();
    for (key, entry) in table.iter() {
        if !totals.contains_key(&key.video_id) {
            return Err(RegistrationError::UnknownVideo { video_id: key.video_id.clone() });
        }
        if entry.usable() {
            *usable_per_video.entry(key.video_id.as_str()).or_default() += 1;
        }
    }
    let total_frames: u64 = totals.values().sum();
    let usable_frames: u64 = usable_per_video.values().sum();
    let total_videos = totals.len() as f64;
    let covered_videos = usable_per_video.len() as f64;
    Ok(RecallReport {
        frame_rate_pct: if total_frames == 0 { 0.0 } else { 100.0 * usable_frames as f64 / total_frames as f64 },
        video_rate_pct: if totals.is_empty() { 0.0 } else { 100.0 * covered_videos / total_videos },
    })
}
