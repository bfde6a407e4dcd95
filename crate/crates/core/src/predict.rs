//! Turns registered poses plus query annotations into 3D predictions: the
//! scan-center baseline point and the displacement vector from the query
//! frame's camera center.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Box3, Pose};
use crate::registration::{apply_3d_constraints, FrameId, FrameKey, PoseTable, ScanGeometry, ScanId, VideoId};

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("query '{query_id}' references unknown scan '{scan_id}'")]
    UnknownScan { query_id: String, scan_id: ScanId },
}

/// One annotated frame of a response track: the frame id and its 2D box as
/// `[x, y, w, h]` in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub frame_id: FrameId,
    pub box2d: [f64; 4],
}

/// The pair of annotated 3D boxes for one query; their centroids are the
/// ground-truth object locations `c1` and `c2`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationPair {
    pub first: Box3,
    pub second: Box3,
}

impl AnnotationPair {
    /// Mean of the two annotated centroids.
    pub fn mean_centroid(&self) -> Vector3<f64> {
        (self.first.center + self.second.center) / 2.0
    }
}

/// A visual query: the object was last seen in the response track, strictly
/// before the query frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualQueryRecord {
    pub query_id: String,
    pub video_id: VideoId,
    pub scan_id: ScanId,
    pub query_frame: FrameId,
    pub response_track: Vec<TrackFrame>,
    pub annotation: AnnotationPair,
}

/// A 3D prediction for one query. `pose_available = false` records an explicit
/// failure: no world point and no displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub query_id: String,
    pub pose_available: bool,
    pub world_point: Option<Vector3<f64>>,
    pub displacement: Option<Vector3<f64>>,
    pub confidence: f64,
    pub predicted_box: Option<Box3>,
}

impl Prediction {
    pub fn unavailable(query_id: impl Into<String>) -> Self {
        Prediction {
            query_id: query_id.into(),
            pose_available: false,
            world_point: None,
            displacement: None,
            confidence: 0.0,
            predicted_box: None,
        }
    }
}

/// 3D target object retrieval strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionMode {
    /// Predict the centroid of the scan bounds.
    ScanCenter,
}

/// Which frames must carry a usable pose for a query to count as covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoseRule {
    /// Both the query frame and at least one response-track frame.
    QueryAndTrack,
    /// Either the query frame or a response-track frame; kept for sensitivity
    /// analysis of the coverage accounting.
    QueryOrTrack,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictOptions {
    pub mode: PredictionMode,
    /// Snap predicted points outside the scan bounds to the nearest vertex.
    pub constraints: bool,
    /// Side length of the emitted axis-aligned prediction box, meters.
    pub box_side: f64,
    pub pose_rule: PoseRule,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            mode: PredictionMode::ScanCenter,
            constraints: true,
            box_side: 0.5,
            pose_rule: PoseRule::QueryAndTrack,
        }
    }
}

/// Centroid of the scan's axis-aligned bounds.
pub fn scan_center_prediction(scan: &ScanGeometry) -> Vector3<f64> {
    scan.bounds.center
}

/// Displacement of a world point from the query frame's camera center,
/// expressed in world axes.
pub fn compute_displacement(world_point: &Vector3<f64>, query_pose: &Pose) -> Vector3<f64> {
    world_point - query_pose.camera_center()
}

/// Produces exactly one prediction per query; queries without pose coverage
/// yield explicit `pose_available = false` records.
pub fn predict_queries(
    queries: &[VisualQueryRecord],
    poses: &PoseTable,
    scans: &BTreeMap<ScanId, ScanGeometry>,
    options: &PredictOptions,
) -> Result<Vec<Prediction>, PredictError> {
    let mut out = Vec::with_capacity(queries.len());
    for query in queries {
        let scan = scans.get(&query.scan_id).ok_or_else(|| PredictError::UnknownScan {
            query_id: query.query_id.clone(),
            scan_id: query.scan_id.clone(),
        })?;

        let query_pose =
            poses.usable_pose(&FrameKey::new(query.video_id.clone(), query.query_frame)).copied();
        let track_covered = query.response_track.iter().any(|t| {
            poses.usable_pose(&FrameKey::new(query.video_id.clone(), t.frame_id)).is_some()
        });
        let available = match options.pose_rule {
            PoseRule::QueryAndTrack => query_pose.is_some() && track_covered,
            PoseRule::QueryOrTrack => query_pose.is_some() || track_covered,
        };
        if !available {
            out.push(Prediction::unavailable(query.query_id.clone()));
            continue;
        }

        let raw_point = match options.mode {
            PredictionMode::ScanCenter => scan_center_prediction(scan),
        };
        let world_point = if options.constraints {
            apply_3d_constraints(&[raw_point], scan)[0]
        } else {
            raw_point
        };
        // The displacement is anchored at the query frame; under the
        // either-frame rule it can be absent even when a point is emitted.
        let displacement = query_pose.map(|p| compute_displacement(&world_point, &p));
        out.push(Prediction {
            query_id: query.query_id.clone(),
            pose_available: true,
            world_point: Some(world_point),
            displacement,
            confidence: 1.0,
            predicted_box: Some(Box3::axis_aligned(
                world_point,
                Vector3::repeat(options.box_side / 2.0),
            )),
        });
    }
    Ok(out)
}
