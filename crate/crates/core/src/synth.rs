//! Deterministic synthetic-scene generation: ground-truth trajectories inside
//! a scan, per-video relative reconstructions under known similarity offsets,
//! anchor files with configurable dropout and outliers, visual queries with
//! annotations at known object points, and an independent expected-metrics
//! oracle.
//!
//! Everything is derived from one seed; the same seed produces byte-identical
//! scene files. Noise draws are consumed even at zero sigma, so a sigma ladder
//! over one seed perturbs the same underlying scene by growing amounts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Box3, Pose, Rotation3, Sim3Transform};
use crate::io::{self, AnchorFile, AnchorFrame, IoError};
use crate::metrics::{MetricsConfig, MetricsCounts, MetricsReport};
use crate::pnp::{CameraIntrinsics, Correspondence2D3D};
use crate::predict::{AnnotationPair, Prediction, TrackFrame, VisualQueryRecord};
use crate::registration::{
    FrameKey, PoseEntry, PoseTable, Provenance, ReconFrame, ReconstructionSource, ScanGeometry,
    SparseReconstruction, VideoId,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryModel {
    RandomWalk,
    Lissajous,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthNoise {
    /// Std-dev of camera-center noise injected into reconstructions, meters.
    pub center_sigma: f64,
    /// Std-dev of rotation noise injected into reconstructions, radians.
    pub rotation_sigma: f64,
    /// Probability that a frame has no PnP anchor.
    pub anchor_dropout: f64,
    /// Probability that an emitted anchor is corrupted.
    pub outlier_fraction: f64,
}

impl Default for SynthNoise {
    fn default() -> Self {
        SynthNoise { center_sigma: 0.0, rotation_sigma: 0.0, anchor_dropout: 0.0, outlier_fraction: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub rng_seed: u64,
    pub num_videos: usize,
    pub frames_per_video: u64,
    pub scan_id: String,
    pub device_id: String,
    /// Side length of the cubic scan volume, meters.
    pub scan_extent: f64,
    pub scan_interior_vertices: usize,
    pub trajectory: TrajectoryModel,
    pub noise: SynthNoise,
    /// Per-video anchor dropout overriding `noise.anchor_dropout`.
    pub anchor_dropout_overrides: BTreeMap<VideoId, f64>,
    /// Uniform range for per-video similarity scales.
    pub sim3_scale_range: (f64, f64),
    /// Per-video similarity translations are uniform in this cube half-width.
    pub sim3_translation_range: f64,
    pub queries_per_video: usize,
    pub points3d_per_model: usize,
    /// Half-distance between the two annotated centroids, meters.
    pub annotation_spread: f64,
    pub annotation_half_extent: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rng_seed: 42,
            num_videos: 3,
            frames_per_video: 40,
            scan_id: "scan0".into(),
            device_id: "dev0".into(),
            scan_extent: 8.0,
            scan_interior_vertices: 120,
            trajectory: TrajectoryModel::Lissajous,
            noise: SynthNoise::default(),
            anchor_dropout_overrides: BTreeMap::new(),
            sim3_scale_range: (0.5, 2.0),
            sim3_translation_range: 5.0,
            queries_per_video: 2,
            points3d_per_model: 80,
            annotation_spread: 0.1,
            annotation_half_extent: 0.25,
        }
    }
}

/// A generated scene plus everything needed to check a pipeline against it.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub config: SynthConfig,
    pub ground_truth: PoseTable,
    pub scan: ScanGeometry,
    pub intrinsics: CameraIntrinsics,
    pub video_recons: BTreeMap<VideoId, SparseReconstruction>,
    pub scan_recon: SparseReconstruction,
    pub anchors: BTreeMap<VideoId, AnchorFile>,
    pub queries: Vec<VisualQueryRecord>,
    pub object_points: BTreeMap<String, Vector3<f64>>,
    pub generator_transforms: BTreeMap<VideoId, Sim3Transform>,
    pub scan_transform: Sim3Transform,
}

impl SynthScene {
    pub fn video_ids(&self) -> Vec<VideoId> {
        self.video_recons.keys().cloned().collect()
    }

    pub fn frame_totals(&self) -> BTreeMap<VideoId, u64> {
        self.video_ids()
            .into_iter()
            .map(|v| (v, self.config.frames_per_video))
            .collect()
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Uniform random rotation via a normalized 4-vector of normals.
pub fn sample_rotation(rng: &mut ChaCha8Rng) -> Rotation3 {
    loop {
        let q = [
            standard_normal(rng),
            standard_normal(rng),
            standard_normal(rng),
            standard_normal(rng),
        ];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-6 {
            if let Ok(r) =
                Rotation3::from_quaternion_wxyz(q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm)
            {
                return r;
            }
        }
    }
}

fn sample_sim3(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Sim3Transform {
    let scale = rng.gen_range(cfg.sim3_scale_range.0..cfg.sim3_scale_range.1);
    let rotation = sample_rotation(rng);
    let r = cfg.sim3_translation_range;
    let translation = Vector3::new(rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r));
    Sim3Transform::new(scale, rotation, translation)
}

/// Camera-to-world rotation looking from `position` toward `target`.
fn look_at(position: &Vector3<f64>, target: &Vector3<f64>) -> Rotation3 {
    let forward = target - position;
    let forward = if forward.norm() < 1e-9 { Vector3::x() } else { forward.normalize() };
    let up = if forward.z.abs() > 0.95 { Vector3::y() } else { Vector3::z() };
    let right = up.cross(&forward).normalize();
    let down = forward.cross(&right);
    let mut m = nalgebra::Matrix3::zeros();
    m.set_column(0, &right);
    m.set_column(1, &down);
    m.set_column(2, &forward);
    Rotation3::from_matrix(&m).expect("look-at basis is orthonormal")
}

struct Trajectory {
    model: TrajectoryModel,
    center: Vector3<f64>,
    amplitude: Vector3<f64>,
    frequency: Vector3<f64>,
    phase: Vector3<f64>,
    walk: Vec<Vector3<f64>>,
}

impl Trajectory {
    fn sample(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Trajectory {
        let e = cfg.scan_extent;
        let center = Vector3::repeat(e / 2.0);
        let amplitude = Vector3::new(
            rng.gen_range(0.2 * e..0.35 * e),
            rng.gen_range(0.2 * e..0.35 * e),
            rng.gen_range(0.1 * e..0.3 * e),
        );
        let frequency = Vector3::new(
            rng.gen_range(0.3..0.9),
            rng.gen_range(0.3..0.9),
            rng.gen_range(0.3..0.9),
        );
        let phase = Vector3::new(
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.0..std::f64::consts::TAU),
        );
        let mut walk = Vec::new();
        if cfg.trajectory == TrajectoryModel::RandomWalk {
            let mut pos = center;
            for _ in 0..cfg.frames_per_video {
                walk.push(pos);
                let step = Vector3::new(
                    standard_normal(rng) * 0.05 * e,
                    standard_normal(rng) * 0.05 * e,
                    standard_normal(rng) * 0.05 * e,
                );
                pos += step;
                for c in pos.iter_mut() {
                    *c = c.clamp(0.1 * e, 0.9 * e);
                }
            }
        }
        Trajectory { model: cfg.trajectory, center, amplitude, frequency, phase, walk }
    }

    fn position(&self, frame: u64) -> Vector3<f64> {
        match self.model {
            TrajectoryModel::RandomWalk => self.walk[frame as usize],
            TrajectoryModel::Lissajous => {
                let t = frame as f64 * 0.2;
                self.center
                    + Vector3::new(
                        self.amplitude.x * (self.frequency.x * t + self.phase.x).sin(),
                        self.amplitude.y * (self.frequency.y * t + self.phase.y).sin(),
                        self.amplitude.z * (self.frequency.z * t + self.phase.z).sin(),
                    )
            }
        }
    }
}

fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 600.0,
        fy: 600.0,
        cx: 320.0,
        cy: 240.0,
        width: 640,
        height: 480,
        distortion: vec![],
    }
}

/// Maps a ground-truth world pose into the relative frame of `transform`,
/// injecting the configured noise (draws are consumed even at zero sigma).
fn to_relative(
    rng: &mut ChaCha8Rng,
    pose: &Pose,
    transform: &Sim3Transform,
    noise: &SynthNoise,
) -> Pose {
    let eps = Vector3::new(standard_normal(rng), standard_normal(rng), standard_normal(rng))
        * noise.center_sigma;
    let axis = Vector3::new(standard_normal(rng), standard_normal(rng), standard_normal(rng));
    let angle = standard_normal(rng) * noise.rotation_sigma;
    let axis = if axis.norm() < 1e-9 { Vector3::x() } else { axis };
    let noisy_rotation = pose.rotation.compose(&Rotation3::from_axis_angle(&axis, angle));
    let inverse = transform.invert();
    Pose::new(
        inverse.rotation.compose(&noisy_rotation),
        inverse.transform_point(&(pose.camera_center() + eps)),
    )
}

pub fn generate(cfg: &SynthConfig) -> SynthScene {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let e = cfg.scan_extent;

    // Scan: the 8 corners pin the bounds exactly, interior vertices fill it.
    let mut vertices = Vec::new();
    for x in [0.0, e] {
        for y in [0.0, e] {
            for z in [0.0, e] {
                vertices.push(Vector3::new(x, y, z));
            }
        }
    }
    for _ in 0..cfg.scan_interior_vertices {
        vertices.push(Vector3::new(
            rng.gen_range(0.0..e),
            rng.gen_range(0.0..e),
            rng.gen_range(0.0..e),
        ));
    }
    let scan = ScanGeometry::new(cfg.scan_id.clone(), vertices).expect("non-empty scan");
    let scan_center = Vector3::repeat(e / 2.0);

    // Ground-truth trajectories.
    let mut ground_truth = PoseTable::new();
    let mut world_poses: BTreeMap<VideoId, Vec<Pose>> = BTreeMap::new();
    for v in 0..cfg.num_videos {
        let video_id = format!("v{v}");
        let trajectory = Trajectory::sample(&mut rng, cfg);
        let mut poses = Vec::with_capacity(cfg.frames_per_video as usize);
        for f in 0..cfg.frames_per_video {
            let position = trajectory.position(f);
            let pose = Pose::new(look_at(&position, &scan_center), position);
            ground_truth.insert(FrameKey::new(video_id.clone(), f), PoseEntry::valid(pose, Provenance::Pnp));
            poses.push(pose);
        }
        world_poses.insert(video_id, poses);
    }

    // Per-video similarity offsets and relative reconstructions.
    let mut generator_transforms = BTreeMap::new();
    let mut video_recons = BTreeMap::new();
    for (video_id, poses) in &world_poses {
        let transform = sample_sim3(&mut rng, cfg);
        let mut recon =
            SparseReconstruction::new(ReconstructionSource::Video { video_id: video_id.clone() });
        for (f, pose) in poses.iter().enumerate() {
            let rel = to_relative(&mut rng, pose, &transform, &cfg.noise);
            recon
                .frames
                .insert(FrameKey::new(video_id.clone(), f as u64), ReconFrame::new(rel, 1));
        }
        let inverse = transform.invert();
        for _ in 0..cfg.points3d_per_model {
            let p = Vector3::new(rng.gen_range(0.0..e), rng.gen_range(0.0..e), rng.gen_range(0.0..e));
            recon.points3d.push(inverse.transform_point(&p));
        }
        generator_transforms.insert(video_id.clone(), transform);
        video_recons.insert(video_id.clone(), recon);
    }

    // One merged reconstruction for the scan configuration.
    let scan_transform = sample_sim3(&mut rng, cfg);
    let mut scan_recon = SparseReconstruction::new(ReconstructionSource::ScanMerge {
        scan_id: cfg.scan_id.clone(),
        device_id: cfg.device_id.clone(),
    });
    for (video_id, poses) in &world_poses {
        for (f, pose) in poses.iter().enumerate() {
            let rel = to_relative(&mut rng, pose, &scan_transform, &cfg.noise);
            scan_recon
                .frames
                .insert(FrameKey::new(video_id.clone(), f as u64), ReconFrame::new(rel, 1));
        }
    }
    let scan_inverse = scan_transform.invert();
    for _ in 0..cfg.points3d_per_model {
        let p = Vector3::new(rng.gen_range(0.0..e), rng.gen_range(0.0..e), rng.gen_range(0.0..e));
        scan_recon.points3d.push(scan_inverse.transform_point(&p));
    }

    // PnP anchors with dropout and injected outliers.
    let mut anchors = BTreeMap::new();
    for (video_id, poses) in &world_poses {
        let dropout = cfg
            .anchor_dropout_overrides
            .get(video_id)
            .copied()
            .unwrap_or(cfg.noise.anchor_dropout);
        let mut frames = Vec::new();
        for (f, pose) in poses.iter().enumerate() {
            let drop_draw: f64 = rng.gen_range(0.0..1.0);
            let outlier_draw: f64 = rng.gen_range(0.0..1.0);
            if drop_draw < dropout {
                continue;
            }
            let anchor_pose = if outlier_draw < cfg.noise.outlier_fraction {
                // Uniform inside the 10x inflated bounds, far from any inlier.
                let lo = scan_center - Vector3::repeat(5.0 * e);
                Pose::new(
                    sample_rotation(&mut rng),
                    lo + Vector3::new(
                        rng.gen_range(0.0..10.0 * e),
                        rng.gen_range(0.0..10.0 * e),
                        rng.gen_range(0.0..10.0 * e),
                    ),
                )
            } else {
                *pose
            };
            frames.push(AnchorFrame {
                frame_id: f as u64,
                pose: anchor_pose,
                inlier_count: 50,
                mean_reprojection_error: 0.0,
            });
        }
        anchors.insert(video_id.clone(), AnchorFile { video_id: video_id.clone(), frames });
    }

    // Queries with annotations symmetric about known object points.
    let mut queries = Vec::new();
    let mut object_points = BTreeMap::new();
    for (v, video_id) in world_poses.keys().enumerate() {
        for q in 0..cfg.queries_per_video {
            let query_frame = cfg.frames_per_video - 1 - q as u64;
            if query_frame < 3 {
                continue;
            }
            let object = Vector3::new(
                rng.gen_range(0.25 * e..0.75 * e),
                rng.gen_range(0.25 * e..0.75 * e),
                rng.gen_range(0.25 * e..0.75 * e),
            );
            let mut direction = Vector3::new(
                standard_normal(&mut rng),
                standard_normal(&mut rng),
                standard_normal(&mut rng),
            );
            if direction.norm() < 1e-9 {
                direction = Vector3::x();
            }
            let offset = direction.normalize() * cfg.annotation_spread;
            let query_id = format!("q{v}_{q}");
            object_points.insert(query_id.clone(), object);
            queries.push(VisualQueryRecord {
                query_id,
                video_id: video_id.clone(),
                scan_id: cfg.scan_id.clone(),
                query_frame,
                response_track: (query_frame.saturating_sub(3)..query_frame)
                    .map(|f| TrackFrame { frame_id: f, box2d: [100.0, 100.0, 40.0, 40.0] })
                    .collect(),
                annotation: AnnotationPair {
                    first: Box3::axis_aligned(object + offset, Vector3::repeat(cfg.annotation_half_extent)),
                    second: Box3::axis_aligned(object - offset, Vector3::repeat(cfg.annotation_half_extent)),
                },
            });
        }
    }

    SynthScene {
        config: cfg.clone(),
        ground_truth,
        scan,
        intrinsics: default_intrinsics(),
        video_recons,
        scan_recon,
        anchors,
        queries,
        object_points,
        generator_transforms,
        scan_transform,
    }
}

/// Prediction oracle assumed by [`expected_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OraclePrediction {
    /// Predictions pinned to the mean annotated centroid of each query.
    Perfect,
    /// Predictions at the scan-bounds center.
    ScanCenter,
}

/// The exact challenge metrics a pipeline would produce on `scene`, computed
/// by brute force from the ground truth with arithmetic independent of the
/// metrics module. Coverage assumes video-config registration succeeds for
/// every video with at least three anchors, plus full coverage through the
/// scan configuration when `use_scan_config` holds and at least three anchors
/// exist in total. AP fields stay empty; box overlap has its own fixtures.
pub fn expected_report(
    scene: &SynthScene,
    cfg: &MetricsConfig,
    oracle: OraclePrediction,
    use_scan_config: bool,
) -> MetricsReport {
    let total_anchor_count: usize = scene.anchors.values().map(|a| a.frames.len()).sum();
    let scan_covers_all = use_scan_config && total_anchor_count >= 3;
    let video_registered: BTreeMap<&str, bool> = scene
        .anchors
        .iter()
        .map(|(v, a)| (v.as_str(), a.frames.len() >= 3))
        .collect();

    let scan_center = Vector3::repeat(scene.config.scan_extent / 2.0);
    let total = scene.queries.len();
    let mut with_pose = 0usize;
    let mut successes = 0usize;
    let mut sq_sum = 0.0;
    let mut dist_sum = 0.0;
    let mut angle_sum = 0.0;
    let mut angle_sq_sum = 0.0;
    let mut angle_count = 0usize;

    for query in &scene.queries {
        let covered = scan_covers_all
            || video_registered.get(query.video_id.as_str()).copied().unwrap_or(false);
        if !covered {
            continue;
        }
        with_pose += 1;

        let c1 = query.annotation.first.center;
        let c2 = query.annotation.second.center;
        let cm = Vector3::new((c1.x + c2.x) / 2.0, (c1.y + c2.y) / 2.0, (c1.z + c2.z) / 2.0);
        let prediction = match oracle {
            OraclePrediction::Perfect => cm,
            OraclePrediction::ScanCenter => scan_center,
        };

        let dx = cm.x - prediction.x;
        let dy = cm.y - prediction.y;
        let dz = cm.z - prediction.z;
        let distance = (dx * dx + dy * dy + dz * dz).sqrt();
        let bx = c1.x - c2.x;
        let by = c1.y - c2.y;
        let bz = c1.z - c2.z;
        let radius = 6.0 * ((bx * bx + by * by + bz * bz).sqrt() + cfg.delta);
        if distance < radius {
            successes += 1;
        }
        sq_sum += distance * distance;
        dist_sum += distance;

        let camera = scene
            .ground_truth
            .get(&FrameKey::new(query.video_id.clone(), query.query_frame))
            .expect("ground truth covers all frames")
            .pose
            .camera_center();
        let pred_disp = prediction - camera;
        let gt_disp = cm - camera;
        let (np, ng) = (pred_disp.norm(), gt_disp.norm());
        if np > 1e-15 && ng > 1e-15 {
            let cosine = (pred_disp.dot(&gt_disp) / (np * ng)).clamp(-1.0, 1.0);
            let angle = cosine.acos();
            angle_sum += angle;
            angle_sq_sum += angle * angle;
            angle_count += 1;
        } else if np <= 1e-15 && ng <= 1e-15 {
            angle_count += 1;
        }
    }

    let pct = |n: usize, d: usize| if d == 0 { 0.0 } else { 100.0 * n as f64 / d as f64 };
    MetricsReport {
        succ_pct: pct(successes, total),
        succ_star_pct: pct(successes, with_pose),
        l2: if with_pose == 0 { 0.0 } else { (sq_sum / with_pose as f64).sqrt() },
        l2_mean: if with_pose == 0 { 0.0 } else { dist_sum / with_pose as f64 },
        angle: if angle_count == 0 { 0.0 } else { angle_sum / angle_count as f64 },
        angle_rms: if angle_count == 0 { 0.0 } else { (angle_sq_sum / angle_count as f64).sqrt() },
        qwp_pct: pct(with_pose, total),
        ap_per_threshold: Vec::new(),
        pr_curves: Vec::new(),
        counts: MetricsCounts { total, with_pose, successes },
    }
}

/// Oracle predictor for pipeline-exactness tests: predicts each query's mean
/// annotated centroid, with availability and displacement taken from the
/// given pose table exactly as the production predictor would.
pub fn pin_predictions_to_annotation(
    queries: &[VisualQueryRecord],
    poses: &PoseTable,
    box_side: f64,
) -> Vec<Prediction> {
    queries
        .iter()
        .map(|query| {
            let query_pose =
                poses.usable_pose(&FrameKey::new(query.video_id.clone(), query.query_frame));
            let track_covered = query.response_track.iter().any(|t| {
                poses.usable_pose(&FrameKey::new(query.video_id.clone(), t.frame_id)).is_some()
            });
            match query_pose {
                Some(pose) if track_covered => {
                    let point = query.annotation.mean_centroid();
                    Prediction {
                        query_id: query.query_id.clone(),
                        pose_available: true,
                        world_point: Some(point),
                        displacement: Some(point - pose.camera_center()),
                        confidence: 1.0,
                        predicted_box: Some(Box3::axis_aligned(point, Vector3::repeat(box_side / 2.0))),
                    }
                }
                _ => Prediction::unavailable(query.query_id.clone()),
            }
        })
        .collect()
}

/// Synthetic PnP problem: a pose, intrinsics, and exact projections of
/// `n_points` world points, with `n_outliers` additional corrupted pixels.
pub fn pnp_test_scene(
    seed: u64,
    n_points: usize,
    n_outliers: usize,
) -> (Pose, CameraIntrinsics, Vec<Correspondence2D3D>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = default_intrinsics();
    let axis = Vector3::new(
        standard_normal(&mut rng),
        standard_normal(&mut rng),
        standard_normal(&mut rng),
    );
    let axis = if axis.norm() < 1e-9 { Vector3::x() } else { axis };
    let pose = Pose::new(
        Rotation3::from_axis_angle(&axis, rng.gen_range(-0.8..0.8)),
        Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
    );

    let mut corrs = Vec::new();
    while corrs.len() < n_points {
        let cam = Vector3::new(
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(2.0..8.0),
        );
        let world = pose.rotation.rotate(&cam) + pose.translation;
        let Ok(pixel) = crate::pnp::project(&pose, &k, &world) else { continue };
        if pixel.x < 0.0 || pixel.x > k.width as f64 || pixel.y < 0.0 || pixel.y > k.height as f64 {
            continue;
        }
        corrs.push(Correspondence2D3D { pixel, world_point: world, match_score: 1.0 });
    }
    for _ in 0..n_outliers {
        let cam = Vector3::new(
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(2.0..8.0),
        );
        let world = pose.rotation.rotate(&cam) + pose.translation;
        corrs.push(Correspondence2D3D {
            pixel: Vector2::new(rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0)),
            world_point: world,
            match_score: 0.1,
        });
    }
    (pose, k, corrs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sim3Dto {
    pub scale: f64,
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl Sim3Dto {
    fn from_sim3(t: &Sim3Transform) -> Self {
        Sim3Dto {
            scale: t.scale,
            rotation: t.rotation.quaternion_wxyz(),
            translation: t.translation.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneVideoEntry {
    pub video_id: String,
    pub frames: u64,
    pub model_dir: String,
    pub anchors_path: String,
}

/// On-disk index of a written scene; all paths are relative to the scene
/// directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneManifest {
    pub schema_version: u32,
    pub scan_id: String,
    pub device_id: String,
    pub scan_path: String,
    pub queries_path: String,
    pub gt_pose_table_path: String,
    pub scan_model_dir: String,
    pub videos: Vec<SceneVideoEntry>,
    pub generator_transforms: BTreeMap<String, Sim3Dto>,
    pub scan_transform: Sim3Dto,
}

/// Writes all scene artifacts below `dir` in the production file formats and
/// returns the manifest (also written as `scene.json`).
pub fn write_scene(scene: &SynthScene, dir: &Path) -> Result<SceneManifest, IoError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let scan_path = format!("{}.ply", scene.scan.scan_id);
    io::write_scan_ply_ascii(&dir.join(&scan_path), &scene.scan)?;
    io::write_queries(&dir.join("queries.json"), &scene.queries)?;
    io::write_pose_table(&dir.join("gt_pose_table.json"), &scene.ground_truth)?;

    let anchors_dir = dir.join("anchors");
    std::fs::create_dir_all(&anchors_dir).map_err(|e| IoError::io(&anchors_dir, e))?;
    let models_dir = dir.join("models");

    let mut videos = Vec::new();
    for (video_id, recon) in &scene.video_recons {
        let anchors_path = format!("anchors/{video_id}.json");
        io::write_anchors(&dir.join(&anchors_path), &scene.anchors[video_id])?;
        let model_dir: PathBuf = models_dir.join(format!("video_{video_id}"));
        io::serialize_sparse_model(
            &model_dir,
            &io::ModelBundle {
                reconstruction: recon.clone(),
                intrinsics: BTreeMap::from([(1u32, scene.intrinsics.clone())]),
            },
        )?;
        videos.push(SceneVideoEntry {
            video_id: video_id.clone(),
            frames: scene.config.frames_per_video,
            model_dir: format!("models/video_{video_id}"),
            anchors_path,
        });
    }

    let scan_model_dir = models_dir.join(format!("scan_{}", scene.config.device_id));
    io::serialize_sparse_model(
        &scan_model_dir,
        &io::ModelBundle {
            reconstruction: scene.scan_recon.clone(),
            intrinsics: BTreeMap::from([(1u32, scene.intrinsics.clone())]),
        },
    )?;

    let manifest = SceneManifest {
        schema_version: io::SCHEMA_VERSION,
        scan_id: scene.scan.scan_id.clone(),
        device_id: scene.config.device_id.clone(),
        scan_path,
        queries_path: "queries.json".into(),
        gt_pose_table_path: "gt_pose_table.json".into(),
        scan_model_dir: format!("models/scan_{}", scene.config.device_id),
        videos,
        generator_transforms: scene
            .generator_transforms
            .iter()
            .map(|(v, t)| (v.clone(), Sim3Dto::from_sim3(t)))
            .collect(),
        scan_transform: Sim3Dto::from_sim3(&scene.scan_transform),
    };
    let manifest_path = dir.join("scene.json");
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| IoError::Schema { path: "$".into(), message: e.to_string() })?;
    text.push('\n');
    std::fs::write(&manifest_path, text).map_err(|e| IoError::io(&manifest_path, e))?;
    Ok(manifest)
}

pub fn read_scene_manifest(path: &Path) -> Result<SceneManifest, IoError> {
    let text = crate::io::read_text(path)?;
    serde_json::from_str(&text)
        .map_err(|e| IoError::Schema { path: "$".into(), message: e.to_string() })
}
