//! Versioned JSON schemas for queries, anchors, pose tables, predictions and
//! metric reports.
//!
//! Every document carries `schema_version: 1`. Reads validate structure and
//! invariants and report a [`IoError::Schema`] naming the offending path; in
//! strict mode unknown fields are rejected, otherwise they are warned about on
//! stderr. Floats are written in shortest-round-trip form, so one
//! parse-serialize cycle is a fixed point.

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::geometry::{Box3, Pose, Rotation3};
use crate::metrics::MetricsReport;
use crate::pnp::Correspondence2D3D;
use crate::predict::{AnnotationPair, Prediction, TrackFrame, VisualQueryRecord};
use crate::registration::{FrameKey, PoseEntry, PoseTable, Provenance};

use super::{AnchorFile, AnchorFrame, IoError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    /// Unknown fields are schema errors.
    Strict,
    /// Unknown fields produce warnings on stderr.
    #[default]
    Lenient,
}

fn schema_error(path: impl Into<String>, message: impl Into<String>) -> IoError {
    IoError::Schema { path: path.into(), message: message.into() }
}

/// Reports keys present in `input` but absent from `canonical` (the parsed
/// document re-serialized, which contains every known key).
fn unknown_fields(input: &Value, canonical: &Value, path: &str, found: &mut Vec<String>) {
    match (input, canonical) {
        (Value::Object(inp), Value::Object(can)) => {
            for (key, value) in inp {
                match can.get(key) {
                    Some(c) => unknown_fields(value, c, &format!("{path}.{key}"), found),
                    None => found.push(format!("{path}.{key}")),
                }
            }
        }
        (Value::Array(inp), Value::Array(can)) => {
            for (i, (v, c)) in inp.iter().zip(can).enumerate() {
                unknown_fields(v, c, &format!("{path}[{i}]"), found);
            }
        }
        _ => {}
    }
}

fn read_document<T: serde::de::DeserializeOwned + Serialize>(
    path: &Path,
    strictness: Strictness,
) -> Result<T, IoError> {
    let text = super::read_text(path)?;
    let raw: Value = serde_json::from_str(&text).map_err(|e| IoError::Parse {
        file: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let version = raw.get("schema_version").and_then(Value::as_u64);
    if version != Some(SCHEMA_VERSION as u64) {
        return Err(schema_error(
            "$.schema_version",
            format!("expected {SCHEMA_VERSION}, found {version:?}"),
        ));
    }
    let parsed: T = serde_json::from_value(raw.clone())
        .map_err(|e| schema_error("$", e.to_string()))?;
    let canonical = serde_json::to_value(&parsed).map_err(|e| schema_error("$", e.to_string()))?;
    let mut unknown = Vec::new();
    unknown_fields(&raw, &canonical, "$", &mut unknown);
    if !unknown.is_empty() {
        match strictness {
            Strictness::Strict => {
                return Err(schema_error(unknown[0].clone(), "unknown field"));
            }
            Strictness::Lenient => {
                for field in &unknown {
                    eprintln!("warning: {}: ignoring unknown field {field}", path.display());
                }
            }
        }
    }
    Ok(parsed)
}

fn write_document<T: Serialize>(path: &Path, doc: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(doc)
        .map_err(|e| schema_error("$", e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| IoError::io(path, e))
}

fn check_finite(values: &[f64], path: &str) -> Result<(), IoError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(schema_error(path, "non-finite value"));
    }
    Ok(())
}

// Wire representations. Option fields serialize as explicit nulls so that the
// canonical form contains every known key.

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseDto {
    /// Camera-to-world unit quaternion, `(w, x, y, z)`.
    rotation: [f64; 4],
    /// Camera center, meters.
    translation: [f64; 3],
}

impl PoseDto {
    fn from_pose(pose: &Pose) -> Self {
        PoseDto { rotation: pose.rotation.quaternion_wxyz(), translation: pose.translation.into() }
    }

    fn to_pose(&self, path: &str) -> Result<Pose, IoError> {
        check_finite(&self.translation, &format!("{path}.translation"))?;
        let [w, x, y, z] = self.rotation;
        let rotation = Rotation3::from_quaternion_wxyz(w, x, y, z)
            .map_err(|e| schema_error(format!("{path}.rotation"), e.to_string()))?;
        Ok(Pose::new(rotation, Vector3::from(self.translation)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BoxDto {
    center: [f64; 3],
    half_extents: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`; identity when omitted.
    rotation: Option<[f64; 4]>,
}

impl BoxDto {
    fn from_box(b: &Box3) -> Self {
        BoxDto {
            center: b.center.into(),
            half_extents: b.half_extents.into(),
            rotation: Some(b.orientation.quaternion_wxyz()),
        }
    }

    fn to_box(&self, path: &str) -> Result<Box3, IoError> {
        check_finite(&self.center, &format!("{path}.center"))?;
        check_finite(&self.half_extents, &format!("{path}.half_extents"))?;
        if self.half_extents.iter().any(|h| *h < 0.0) {
            return Err(schema_error(format!("{path}.half_extents"), "negative half extent"));
        }
        let orientation = match self.rotation {
            None => Rotation3::identity(),
            Some([w, x, y, z]) => Rotation3::from_quaternion_wxyz(w, x, y, z)
                .map_err(|e| schema_error(format!("{path}.rotation"), e.to_string()))?,
        };
        Ok(Box3 {
            center: Vector3::from(self.center),
            half_extents: Vector3::from(self.half_extents),
            orientation,
        })
    }
}

// ---- queries ----

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QueriesDoc {
    schema_version: u32,
    queries: Vec<QueryDto>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct QueryDto {
    query_id: String,
    video_id: String,
    scan_id: String,
    query_frame: u64,
    response_track: Vec<TrackFrameDto>,
    annotation: AnnotationDto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrackFrameDto {
    frame_id: u64,
    box2d: [f64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnnotationDto {
    first: BoxDto,
    second: BoxDto,
}

pub fn write_queries(path: &Path, queries: &[VisualQueryRecord]) -> Result<(), IoError> {
    let doc = QueriesDoc {
        schema_version: SCHEMA_VERSION,
        queries: queries
            .iter()
            .map(|q| QueryDto {
                query_id: q.query_id.clone(),
                video_id: q.video_id.clone(),
                scan_id: q.scan_id.clone(),
                query_frame: q.query_frame,
                response_track: q
                    .response_track
                    .iter()
                    .map(|t| TrackFrameDto { frame_id: t.frame_id, box2d: t.box2d })
                    .collect(),
                annotation: AnnotationDto {
                    first: BoxDto::from_box(&q.annotation.first),
                    second: BoxDto::from_box(&q.annotation.second),
                },
            })
            .collect(),
    };
    write_document(path, &doc)
}

pub fn read_queries(path: &Path, strictness: Strictness) -> Result<Vec<VisualQueryRecord>, IoError> {
    let doc: QueriesDoc = read_document(path, strictness)?;
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(doc.queries.len());
    for (i, q) in doc.queries.iter().enumerate() {
        let base = format!("$.queries[{i}]");
        if !seen.insert(q.query_id.clone()) {
            return Err(schema_error(format!("{base}.query_id"), "duplicate query id"));
        }
        if q.response_track.is_empty() {
            return Err(schema_error(format!("{base}.response_track"), "must be non-empty"));
        }
        for (j, t) in q.response_track.iter().enumerate() {
            if t.frame_id >= q.query_frame {
                return Err(schema_error(
                    format!("{base}.response_track[{j}].frame_id"),
                    "response track frames must precede the query frame",
                ));
            }
            check_finite(&t.box2d, &format!("{base}.response_track[{j}].box2d"))?;
        }
        out.push(VisualQueryRecord {
            query_id: q.query_id.clone(),
            video_id: q.video_id.clone(),
            scan_id: q.scan_id.clone(),
            query_frame: q.query_frame,
            response_track: q
                .response_track
                .iter()
                .map(|t| TrackFrame { frame_id: t.frame_id, box2d: t.box2d })
                .collect(),
            annotation: AnnotationPair {
                first: q.annotation.first.to_box(&format!("{base}.annotation.first"))?,
                second: q.annotation.second.to_box(&format!("{base}.annotation.second"))?,
            },
        });
    }
    Ok(out)
}

// ---- anchors ----

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnchorsDoc {
    schema_version: u32,
    video_id: String,
    frames: Vec<AnchorFrameDto>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnchorFrameDto {
    frame_id: u64,
    pose: PoseDto,
    inlier_count: u32,
    mean_reprojection_error: f64,
}

pub fn write_anchors(path: &Path, anchors: &AnchorFile) -> Result<(), IoError> {
    let doc = AnchorsDoc {
        schema_version: SCHEMA_VERSION,
        video_id: anchors.video_id.clone(),
        frames: anchors
            .frames
            .iter()
            .map(|f| AnchorFrameDto {
                frame_id: f.frame_id,
                pose: PoseDto::from_pose(&f.pose),
                inlier_count: f.inlier_count,
                mean_reprojection_error: f.mean_reprojection_error,
            })
            .collect(),
    };
    write_document(path, &doc)
}

pub fn read_anchors(path: &Path, strictness: Strictness) -> Result<AnchorFile, IoError> {
    let doc: AnchorsDoc = read_document(path, strictness)?;
    let mut seen = std::collections::BTreeSet::new();
    let mut frames = Vec::with_capacity(doc.frames.len());
    for (i, f) in doc.frames.iter().enumerate() {
        let base = format!("$.frames[{i}]");
        if !seen.insert(f.frame_id) {
            return Err(schema_error(format!("{base}.frame_id"), "duplicate frame id"));
        }
        if !f.mean_reprojection_error.is_finite() || f.mean_reprojection_error < 0.0 {
            return Err(schema_error(
                format!("{base}.mean_reprojection_error"),
                "must be finite and non-negative",
            ));
        }
        frames.push(AnchorFrame {
            frame_id: f.frame_id,
            pose: f.pose.to_pose(&format!("{base}.pose"))?,
            inlier_count: f.inlier_count,
            mean_reprojection_error: f.mean_reprojection_error,
        });
    }
    Ok(AnchorFile { video_id: doc.video_id, frames })
}

// ---- pose tables ----

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseTableDoc {
    schema_version: u32,
    entries: Vec<PoseEntryDto>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseEntryDto {
    video_id: String,
    frame_id: u64,
    pose: PoseDto,
    provenance: Provenance,
    valid: bool,
    outlier: bool,
}

pub fn write_pose_table(path: &Path, table: &PoseTable) -> Result<(), IoError> {
    let doc = PoseTableDoc {
        schema_version: SCHEMA_VERSION,
        entries: table
            .iter()
            .map(|(key, entry)| PoseEntryDto {
                video_id: key.video_id.clone(),
                frame_id: key.frame_id,
                pose: PoseDto::from_pose(&entry.pose),
                provenance: entry.provenance,
                valid: entry.valid,
                outlier: entry.outlier,
            })
            .collect(),
    };
    write_document(path, &doc)
}

pub fn read_pose_table(path: &Path, strictness: Strictness) -> Result<PoseTable, IoError> {
    let doc: PoseTableDoc = read_document(path, strictness)?;
    let mut table = PoseTable::new();
    for (i, e) in doc.entries.iter().enumerate() {
        let base = format!("$.entries[{i}]");
        if e.outlier && !e.valid {
            return Err(schema_error(
                format!("{base}.outlier"),
                "outlier entries must be valid (outliers are valid poses flagged post hoc)",
            ));
        }
        let key = FrameKey::new(e.video_id.clone(), e.frame_id);
        let entry = PoseEntry {
            pose: e.pose.to_pose(&format!("{base}.pose"))?,
            provenance: e.provenance,
            valid: e.valid,
            outlier: e.outlier,
        };
        if table.get(&key).is_some() {
            return Err(schema_error(format!("{base}.frame_id"), "duplicate frame key"));
        }
        table.insert(key, entry);
    }
    Ok(table)
}

// ---- predictions ----

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictionsDoc {
    schema_version: u32,
    predictions: Vec<PredictionDto>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictionDto {
    query_id: String,
    pose_available: bool,
    world_point: Option<[f64; 3]>,
    displacement: Option<[f64; 3]>,
    confidence: f64,
    predicted_box: Option<BoxDto>,
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<(), IoError> {
    let doc = PredictionsDoc {
        schema_version: SCHEMA_VERSION,
        predictions: preds
            .iter()
            .map(|p| PredictionDto {
                query_id: p.query_id.clone(),
                pose_available: p.pose_available,
                world_point: p.world_point.map(Into::into),
                displacement: p.displacement.map(Into::into),
                confidence: p.confidence,
                predicted_box: p.predicted_box.as_ref().map(BoxDto::from_box),
            })
            .collect(),
    };
    write_document(path, &doc)
}

pub fn read_predictions(path: &Path, strictness: Strictness) -> Result<Vec<Prediction>, IoError> {
    let doc: PredictionsDoc = read_document(path, strictness)?;
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(doc.predictions.len());
    for (i, p) in doc.predictions.iter().enumerate() {
        let base = format!("$.predictions[{i}]");
        if !seen.insert(p.query_id.clone()) {
            return Err(schema_error(format!("{base}.query_id"), "duplicate query id"));
        }
        if p.pose_available && p.world_point.is_none() {
            return Err(schema_error(
                format!("{base}.world_point"),
                "required when pose_available is true",
            ));
        }
        if !p.pose_available && (p.world_point.is_some() || p.displacement.is_some()) {
            return Err(schema_error(
                format!("{base}.pose_available"),
                "world_point and displacement must be absent without a pose",
            ));
        }
        if !(0.0..=1.0).contains(&p.confidence) {
            return Err(schema_error(format!("{base}.confidence"), "must lie in [0, 1]"));
        }
        if let Some(w) = &p.world_point {
            check_finite(w, &format!("{base}.world_point"))?;
        }
        if let Some(d) = &p.displacement {
            check_finite(d, &format!("{base}.displacement"))?;
        }
        out.push(Prediction {
            query_id: p.query_id.clone(),
            pose_available: p.pose_available,
            world_point: p.world_point.map(Vector3::from),
            displacement: p.displacement.map(Vector3::from),
            confidence: p.confidence,
            predicted_box: match &p.predicted_box {
                None => None,
                Some(b) => Some(b.to_box(&format!("{base}.predicted_box"))?),
            },
        });
    }
    Ok(out)
}

// ---- reports ----

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReportDoc {
    schema_version: u32,
    report: MetricsReport,
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<(), IoError> {
    write_document(path, &ReportDoc { schema_version: SCHEMA_VERSION, report: report.clone() })
}

pub fn read_report(path: &Path, strictness: Strictness) -> Result<MetricsReport, IoError> {
    let doc: ReportDoc = read_document(path, strictness)?;
    Ok(doc.report)
}

/// Flat text table in the column order of the standard results tables:
/// Succ%, Succ*%, L2, angle, QwP%, then AP per IoU threshold.
pub fn render_report_table(report: &MetricsReport) -> String {
    let mut header = format!(
        "{:>10} {:>10} {:>10} {:>10} {:>10}",
        "Succ%", "Succ*%", "L2", "angle", "QwP%"
    );
    let mut row = format!(
        "{:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
        report.succ_pct, report.succ_star_pct, report.l2, report.angle, report.qwp_pct
    );
    for entry in &report.ap_per_threshold {
        header.push_str(&format!(" {:>12}", format!("AP@{}", entry.iou_threshold)));
        row.push_str(&format!(" {:>12.4}", entry.ap));
    }
    format!("{header}\n{row}\n")
}

// ---- correspondences (library-level helper for PnP inputs) ----

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CorrespondencesDoc {
    schema_version: u32,
    frames: Vec<FrameCorrespondencesDto>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameCorrespondencesDto {
    frame_id: u64,
    correspondences: Vec<CorrespondenceDto>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CorrespondenceDto {
    pixel: [f64; 2],
    world_point: [f64; 3],
    match_score: f64,
}

pub fn write_correspondences(
    path: &Path,
    frames: &[(u64, Vec<Correspondence2D3D>)],
) -> Result<(), IoError> {
    let doc = CorrespondencesDoc {
        schema_version: SCHEMA_VERSION,
        frames: frames
            .iter()
            .map(|(frame_id, corrs)| FrameCorrespondencesDto {
                frame_id: *frame_id,
                correspondences: corrs
                    .iter()
                    .map(|c| CorrespondenceDto {
                        pixel: [c.pixel.x, c.pixel.y],
                        world_point: c.world_point.into(),
                        match_score: c.match_score,
                    })
                    .collect(),
            })
            .collect(),
    };
    write_document(path, &doc)
}

pub fn read_correspondences(
    path: &Path,
    strictness: Strictness,
) -> Result<Vec<(u64, Vec<Correspondence2D3D>)>, IoError> {
    let doc: CorrespondencesDoc = read_document(path, strictness)?;
    let mut out = Vec::with_capacity(doc.frames.len());
    for (i, f) in doc.frames.iter().enumerate() {
        let mut corrs = Vec::with_capacity(f.correspondences.len());
        for (j, c) in f.correspondences.iter().enumerate() {
            let base = format!("$.frames[{i}].correspondences[{j}]");
            check_finite(&c.pixel, &format!("{base}.pixel"))?;
            check_finite(&c.world_point, &format!("{base}.world_point"))?;
            if !(0.0..=1.0).contains(&c.match_score) {
                return Err(schema_error(format!("{base}.match_score"), "must lie in [0, 1]"));
            }
            corrs.push(Correspondence2D3D {
                pixel: Vector2::new(c.pixel[0], c.pixel[1]),
                world_point: Vector3::from(c.world_point),
                match_score: c.match_score,
            });
        }
        out.push((f.frame_id, corrs));
    }
    Ok(out)
}
