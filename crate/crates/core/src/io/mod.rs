//! Ingestion and emission: sparse-model text parsing, scan loading, and the
//! versioned JSON schemas for queries, anchors, pose tables, predictions and
//! reports.
//!
//! Convention conversion happens here and only here: sparse-model image lines
//! store world-to-camera extrinsics, which are converted to the crate-wide
//! camera-to-world convention at the parse boundary. Parsers never panic on
//! malformed input; every failure is a typed error with a location.

mod colmap;
mod scan;
mod schema;

use std::collections::BTreeMap;
use std::path::PathBuf;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::metrics::ApGroundTruth;
use crate::pnp::{CameraIntrinsics, PnPConfig};
use crate::predict::PredictOptions;
use crate::procrustes::RobustAlignConfig;
use crate::registration::{
    FrameId, FrameKey, PoseEntry, PoseTable, Provenance, SparseReconstruction, VideoId,
};

pub use colmap::{parse_sparse_model, serialize_sparse_model};
pub use scan::{load_scan, write_scan_ply_ascii, write_scan_ply_binary, write_scan_xyz};
pub use schema::{
    read_anchors, read_correspondences, read_pose_table, read_predictions, read_queries,
    read_report, render_report_table, write_anchors, write_correspondences, write_pose_table,
    write_predictions, write_queries, write_report, Strictness, SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: parse error: {message}")]
    Parse { file: PathBuf, line: usize, message: String },
    #[error("{file}:{line}: unsupported camera model '{model}' (pinhole family only)")]
    UnsupportedCameraModel { file: PathBuf, line: usize, model: String },
    #[error("{file}:{line}: convention error: {message}")]
    Convention { file: PathBuf, line: usize, message: String },
    #[error("{file}: scan contains no vertices")]
    EmptyScan { file: PathBuf },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
}

impl IoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IoError::Io { path: path.into(), source }
    }

    /// True for errors caused by the input data rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, IoError::Io { .. })
    }
}

/// Reads a text file, reporting invalid UTF-8 as a parse error rather than an
/// I/O failure.
pub(crate) fn read_text(path: &std::path::Path) -> Result<String, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| IoError::Parse {
        file: path.to_path_buf(),
        line: 0,
        message: format!("not valid UTF-8: {e}"),
    })
}

/// A parsed sparse model: the reconstruction plus per-camera intrinsics.
/// Every frame's camera id resolves into the intrinsics map.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub reconstruction: SparseReconstruction,
    pub intrinsics: BTreeMap<u32, CameraIntrinsics>,
}

/// Per-frame PnP results for one video, as exchanged on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorFile {
    pub video_id: VideoId,
    pub frames: Vec<AnchorFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorFrame {
    pub frame_id: FrameId,
    pub pose: Pose,
    pub inlier_count: u32,
    pub mean_reprojection_error: f64,
}

impl AnchorFile {
    /// Anchors as a pose table with PnP provenance.
    pub fn to_pose_table(&self) -> PoseTable {
        self.frames
            .iter()
            .map(|f| {
                (
                    FrameKey::new(self.video_id.clone(), f.frame_id),
                    PoseEntry::valid(f.pose, Provenance::Pnp),
                )
            })
            .collect()
    }
}

/// Merges several anchor files into one table; later files win on key
/// collisions.
pub fn anchors_to_pose_table(files: &[AnchorFile]) -> PoseTable {
    let mut table = PoseTable::new();
    for file in files {
        for frame in &file.frames {
            table.insert(
                FrameKey::new(file.video_id.clone(), frame.frame_id),
                PoseEntry::valid(frame.pose, Provenance::Pnp),
            );
        }
    }
    table
}

/// How image file names map to `(video_id, frame_id)` keys.
///
/// The default takes the trailing integer before the extension as the frame id
/// and everything before it (minus a separator) as the video id, falling back
/// to the model's source video when the prefix is empty. A custom regex with
/// `video` and `frame` capture groups can replace the rule.
#[derive(Debug, Clone, Default)]
pub enum FrameNamePattern {
    #[default]
    TrailingInteger,
    Regex(Regex),
}

impl FrameNamePattern {
    pub fn from_regex(pattern: &str) -> Result<Self, IoError> {
        let re = Regex::new(pattern).map_err(|e| IoError::Schema {
            path: "frame_name_pattern".into(),
            message: e.to_string(),
        })?;
        if re.capture_names().flatten().filter(|n| *n == "frame").count() != 1 {
            return Err(IoError::Schema {
                path: "frame_name_pattern".into(),
                message: "regex must define a 'frame' capture group".into(),
            });
        }
        Ok(FrameNamePattern::Regex(re))
    }

    /// Splits an image name into the video prefix (possibly empty) and frame
    /// id. Returns `None` when the name does not match.
    pub fn parse(&self, name: &str) -> Option<(String, FrameId)> {
        match self {
            FrameNamePattern::TrailingInteger => {
                let stem = name.rsplit_once('.').map(|(s, _)| s).unwrap_or(name);
                let digits_start = stem
                    .char_indices()
                    .rev()
                    .take_while(|(_, c)| c.is_ascii_digit())
                    .map(|(i, _)| i)
                    .last()?;
                let frame: FrameId = stem[digits_start..].parse().ok()?;
                let prefix = stem[..digits_start].trim_end_matches(['_', '-', '.']);
                Some((prefix.to_string(), frame))
            }
            FrameNamePattern::Regex(re) => {
                let caps = re.captures(name)?;
                let frame: FrameId = caps.name("frame")?.as_str().parse().ok()?;
                let video = caps.name("video").map(|m| m.as_str().to_string()).unwrap_or_default();
                Some((video, frame))
            }
        }
    }
}

/// Per-subcommand knobs mirroring every config type, loadable from one JSON
/// document.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolkitConfig {
    pub robust_align: RobustAlignConfig,
    pub pnp: PnPConfig,
    pub fusion: crate::registration::FusionPolicy,
    pub predict: PredictOptions,
    pub metrics: MetricsFileConfig,
    pub synth: crate::synth::SynthConfig,
}

/// Metrics knobs as stored in config files; `delta` stays optional here so
/// that forgetting it is an explicit error at evaluation time, never a silent
/// default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsFileConfig {
    pub delta: Option<f64>,
    pub iou_thresholds: Vec<f64>,
    pub ap_ground_truth: ApGroundTruth,
}

impl Default for MetricsFileConfig {
    fn default() -> Self {
        MetricsFileConfig {
            delta: None,
            iou_thresholds: vec![0.05, 0.1, 0.25, 0.5],
            ap_ground_truth: ApGroundTruth::MergedHull,
        }
    }
}

pub fn read_toolkit_config(path: &std::path::Path) -> Result<ToolkitConfig, IoError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::Schema {
        path: format!("{}: $", path.display()),
        message: e.to_string(),
    })
}
