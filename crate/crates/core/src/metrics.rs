//! Evaluation of visual-query 3D localization predictions: the challenge
//! metrics (success rate, L2, angular error, query ratio) and a complementary
//! 3D-detection-style average precision over box IoU.
//!
//! The success test for one query compares the predicted point against the
//! mean `c_m` of the two annotated centroids: it passes iff
//! `||c_m - t|| < 6 (||c1 - c2|| + delta)`, strictly. `delta` has no default
//! and must be supplied explicitly; inventing one would corrupt comparisons.
//!
//! Angular errors are radians. L2 is reported as the RMSE over queries with a
//! pose (primary) and as the mean distance (secondary), since either reading
//! of the aggregation is defensible.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Box3;
use crate::predict::{Prediction, VisualQueryRecord};
use crate::registration::{FrameKey, PoseTable};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction '{query_id}' does not match any query")]
    MismatchedIds { query_id: String },
    #[error("duplicate prediction for query '{query_id}'")]
    DuplicatePrediction { query_id: String },
    #[error("query '{query_id}' has no prediction")]
    MissingPrediction { query_id: String },
    #[error("invalid config: {reason}")]
    InvalidConfig { reason: String },
}

/// How the ground-truth box for AP matching is derived from the two annotated
/// boxes of a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApGroundTruth {
    /// One merged box: the axis-aligned hull of the two annotations.
    MergedHull,
    /// Keep both boxes and score a prediction by its best IoU against either.
    PerAnnotatorMax,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsConfig {
    /// The slack term in the success threshold, meters. Required; the
    /// evaluation protocol does not define a default.
    pub delta: f64,
    /// Strictly increasing IoU thresholds for the AP sweep.
    pub iou_thresholds: Vec<f64>,
    #[serde(default = "default_ap_ground_truth")]
    pub ap_ground_truth: ApGroundTruth,
}

fn default_ap_ground_truth() -> ApGroundTruth {
    ApGroundTruth::MergedHull
}

impl MetricsConfig {
    pub fn new(delta: f64, iou_thresholds: Vec<f64>) -> Result<Self, MetricsError> {
        let cfg = MetricsConfig { delta, iou_thresholds, ap_ground_truth: ApGroundTruth::MergedHull };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if !self.delta.is_finite() || self.delta < 0.0 {
            return Err(MetricsError::InvalidConfig { reason: format!("delta must be >= 0, got {}", self.delta) });
        }
        for w in self.iou_thresholds.windows(2) {
            if w[1] <= w[0] {
                return Err(MetricsError::InvalidConfig {
                    reason: "iou_thresholds must be strictly increasing".into(),
                });
            }
        }
        if self.iou_thresholds.iter().any(|t| *t <= 0.0 || *t > 1.0) {
            return Err(MetricsError::InvalidConfig {
                reason: "iou_thresholds must lie in (0, 1]".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub iou_threshold: f64,
    pub points: Vec<PrPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApEntry {
    pub iou_threshold: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsCounts {
    pub total: usize,
    pub with_pose: usize,
    pub successes: usize,
}

/// The full evaluation result. `succ_pct` counts successes over all queries,
/// `succ_star_pct` over queries with a pose only; the numerator is the same
/// integer, recorded in `counts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub succ_pct: f64,
    pub succ_star_pct: f64,
    /// RMSE of the centroid distance over queries with a pose, meters.
    pub l2: f64,
    /// Mean centroid distance over the same population, meters.
    pub l2_mean: f64,
    /// Mean angle between predicted and ground-truth displacement, radians.
    pub angle: f64,
    /// RMS aggregation of the same angles.
    pub angle_rms: f64,
    pub qwp_pct: f64,
    pub ap_per_threshold: Vec<ApEntry>,
    pub pr_curves: Vec<PrCurve>,
    pub counts: MetricsCounts,
}

/// The per-query success test of the challenge protocol; strict inequality.
pub fn success(pred_point: &Vector3<f64>, c1: &Vector3<f64>, c2: &Vector3<f64>, delta: f64) -> bool {
    let c_m = (c1 + c2) / 2.0;
    (c_m - pred_point).norm() < 6.0 * ((c1 - c2).norm() + delta)
}

/// Volume IoU of two boxes via their world-frame axis-aligned bounds. Two
/// degenerate (zero-volume) boxes score 1 when their bounds coincide exactly
/// and 0 otherwise.
pub fn iou_3d(a: &Box3, b: &Box3) -> f64 {
    let (amin, amax) = a.aabb();
    let (bmin, bmax) = b.aabb();
    let vol = |min: &Vector3<f64>, max: &Vector3<f64>| -> f64 {
        (max.x - min.x).max(0.0) * (max.y - min.y).max(0.0) * (max.z - min.z).max(0.0)
    };
    let va = vol(&amin, &amax);
    let vb = vol(&bmin, &bmax);
    if va == 0.0 && vb == 0.0 {
        return if amin == bmin && amax == bmax { 1.0 } else { 0.0 };
    }
    let imin = amin.sup(&bmin);
    let imax = amax.inf(&bmax);
    let vi = vol(&imin, &imax);
    let union = va + vb - vi;
    if union <= 0.0 {
        0.0
    } else {
        vi / union
    }
}

/// Average precision at one IoU threshold. Predictions are sorted by
/// descending confidence (ties by query id); a prediction is a true positive
/// iff its IoU against its query's not-yet-matched ground truth reaches the
/// threshold. Ground truths with several boxes (per-annotator mode) score by
/// the best IoU but still match at most once. The AP is the area under the
/// monotone precision envelope over recall.
pub fn average_precision_3d(
    preds: &[(Box3, f64, String)],
    gts: &[(Box3, String)],
    iou_threshold: f64,
) -> (f64, Vec<PrPoint>) {
    let mut gt_boxes: BTreeMap<&str, (Vec<&Box3>, bool)> = BTreeMap::new();
    for (b, id) in gts {
        gt_boxes.entry(id.as_str()).or_insert_with(|| (Vec::new(), false)).0.push(b);
    }
    let num_gt = gt_boxes.len();
    if num_gt == 0 || preds.is_empty() {
        return (0.0, Vec::new());
    }

    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .1
            .partial_cmp(&preds[a].1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| preds[a].2.cmp(&preds[b].2))
    });

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut points = Vec::with_capacity(order.len());
    for idx in order {
        let (pred_box, _, query_id) = &preds[idx];
        let hit = match gt_boxes.get_mut(query_id.as_str()) {
            Some((boxes, matched)) if !*matched => {
                let best = boxes.iter().map(|gt| iou_3d(pred_box, gt)).fold(0.0, f64::max);
                if best >= iou_threshold {
                    *matched = true;
                    true
                } else {
                    false
                }
            }
            _ => false,
        };
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        points.push(PrPoint {
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / num_gt as f64,
        });
    }

    // Area under the precision envelope: each recall increment contributes the
    // maximum precision achieved at or beyond it.
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, p) in points.iter().enumerate() {
        if p.recall > prev_recall {
            let envelope = points[i..].iter().map(|q| q.precision).fold(0.0, f64::max);
            ap += (p.recall - prev_recall) * envelope;
            prev_recall = p.recall;
        }
    }
    (ap, points)
}

/// The per-query success radius `6 (||c1 - c2|| + delta)` with distribution
/// statistics, quantifying how permissive the success threshold is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlackReport {
    pub per_query: Vec<(String, f64)>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

pub fn threshold_slack_report(queries: &[VisualQueryRecord], cfg: &MetricsConfig) -> SlackReport {
    let mut per_query: Vec<(String, f64)> = queries
        .iter()
        .map(|q| {
            let radius =
                6.0 * ((q.annotation.first.center - q.annotation.second.center).norm() + cfg.delta);
            (q.query_id.clone(), radius)
        })
        .collect();
    let mut radii: Vec<f64> = per_query.iter().map(|(_, r)| *r).collect();
    radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = radii.len();
    let (mean, min, max, median) = if n == 0 {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        let median = if n % 2 == 1 { radii[n / 2] } else { (radii[n / 2 - 1] + radii[n / 2]) / 2.0 };
        (radii.iter().sum::<f64>() / n as f64, radii[0], radii[n - 1], median)
    };
    per_query.sort_by(|a, b| a.0.cmp(&b.0));
    SlackReport { per_query, mean, min, max, median }
}

/// Evaluates one prediction per query. Ground-truth camera centers for the
/// angular error come from `gt_poses` when given; otherwise the center implied
/// by each prediction (`world_point - displacement`) is used.
pub fn evaluate(
    preds: &[Prediction],
    queries: &[VisualQueryRecord],
    gt_poses: Option<&PoseTable>,
    cfg: &MetricsConfig,
) -> Result<MetricsReport, MetricsError> {
    cfg.validate()?;

    let query_by_id: BTreeMap<&str, &VisualQueryRecord> =
        queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
    let mut pred_by_id: BTreeMap<&str, &Prediction> = BTreeMap::new();
    for p in preds {
        if !query_by_id.contains_key(p.query_id.as_str()) {
            return Err(MetricsError::MismatchedIds { query_id: p.query_id.clone() });
        }
        if pred_by_id.insert(p.query_id.as_str(), p).is_some() {
            return Err(MetricsError::DuplicatePrediction { query_id: p.query_id.clone() });
        }
    }
    for q in queries {
        if !pred_by_id.contains_key(q.query_id.as_str()) {
            return Err(MetricsError::MissingPrediction { query_id: q.query_id.clone() });
        }
    }

    let total = queries.len();
    let mut with_pose = 0usize;
    let mut successes = 0usize;
    let mut sq_dist_sum = 0.0;
    let mut dist_sum = 0.0;
    let mut angles: Vec<f64> = Vec::new();

    for (id, query) in &query_by_id {
        let pred = pred_by_id[id];
        if !pred.pose_available {
            continue;
        }
        with_pose += 1;
        let Some(point) = pred.world_point else { continue };
        let c1 = query.annotation.first.center;
        let c2 = query.annotation.second.center;
        let c_m = (c1 + c2) / 2.0;
        if success(&point, &c1, &c2, cfg.delta) {
            successes += 1;
        }
        let d = (c_m - point).norm();
        sq_dist_sum += d * d;
        dist_sum += d;

        if let Some(pred_disp) = pred.displacement {
            let gt_center = gt_poses
                .and_then(|poses| {
                    poses
                        .usable_pose(&FrameKey::new(query.video_id.clone(), query.query_frame))
                        .map(|p| p.camera_center())
                })
                .or(Some(point - pred_disp));
            if let Some(center) = gt_center {
                let gt_disp = c_m - center;
                let (np, ng) = (pred_disp.norm(), gt_disp.norm());
                if np > 1e-15 && ng > 1e-15 {
                    angles.push((pred_disp.dot(&gt_disp) / (np * ng)).clamp(-1.0, 1.0).acos());
                } else if np <= 1e-15 && ng <= 1e-15 {
                    angles.push(0.0);
                }
            }
        }
    }

    let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    let (l2, l2_mean) = if with_pose == 0 {
        (0.0, 0.0)
    } else {
        ((sq_dist_sum / with_pose as f64).sqrt(), dist_sum / with_pose as f64)
    };
    let (angle, angle_rms) = if angles.is_empty() {
        (0.0, 0.0)
    } else {
        let mean = angles.iter().sum::<f64>() / angles.len() as f64;
        let rms = (angles.iter().map(|a| a * a).sum::<f64>() / angles.len() as f64).sqrt();
        (mean, rms)
    };

    let mut ap_per_threshold = Vec::new();
    let mut pr_curves = Vec::new();
    let ap_preds: Vec<(Box3, f64, String)> = preds
        .iter()
        .filter_map(|p| p.predicted_box.map(|b| (b, p.confidence, p.query_id.clone())))
        .collect();
    let ap_gts: Vec<(Box3, String)> = queries
        .iter()
        .flat_map(|q| match cfg.ap_ground_truth {
            ApGroundTruth::MergedHull => {
                let (min1, max1) = q.annotation.first.aabb();
                let (min2, max2) = q.annotation.second.aabb();
                vec![(Box3::from_min_max(min1.inf(&min2), max1.sup(&max2)), q.query_id.clone())]
            }
            ApGroundTruth::PerAnnotatorMax => vec![
                (q.annotation.first, q.query_id.clone()),
                (q.annotation.second, q.query_id.clone()),
            ],
        })
        .collect();
    for threshold in &cfg.iou_thresholds {
        let (ap, points) = average_precision_3d(&ap_preds, &ap_gts, *threshold);
        ap_per_threshold.push(ApEntry { iou_threshold: *threshold, ap });
        pr_curves.push(PrCurve { iou_threshold: *threshold, points });
    }

    Ok(MetricsReport {
        succ_pct: pct(successes, total),
        succ_star_pct: pct(successes, with_pose),
        l2,
        l2_mean,
        angle,
        angle_rms,
        qwp_pct: pct(with_pose, total),
        ap_per_threshold,
        pr_curves,
        counts: MetricsCounts { total, with_pose, successes },
    })
}
