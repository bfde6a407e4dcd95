//! Registration of per-video relative camera-pose reconstructions into a world
//! 3D-scan coordinate frame, plus evaluation of visual-query 3D localization
//! predictions.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: rigid and similarity (Sim3) transform value types.
//! - [`procrustes`]: weighted closed-form similarity alignment of corresponding
//!   3D point sets, with a RANSAC-robust wrapper.
//! - [`pnp`]: RANSAC Perspective-n-Point pose estimation from 2D-3D
//!   correspondences and a temporally constrained relocalization pass.
//! - [`registration`]: fits per-video / per-scan transforms from PnP anchors,
//!   maps reconstructions into scan coordinates, fuses configurations, filters
//!   outliers and applies 3D scan constraints.
//! - [`predict`]: turns registered poses plus query annotations into 3D
//!   predictions (scan-center baseline and displacement vectors).
//! - [`metrics`]: challenge metrics (success rate, L2, angular error, query
//!   ratio) plus 3D-IoU average precision with precision-recall curves.
//! - [`io`]: sparse-model text parsing, scan loading, and JSON schemas.
//! - [`synth`]: deterministic synthetic-scene generator used as an independent
//!   oracle by the test suite.
//!
//! All distances are meters, all angles radians, all poses camera-to-world.

pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pnp;
pub mod predict;
pub mod procrustes;
pub mod registration;
pub mod synth;

pub use geometry::{Box3, Pose, Rotation3, Sim3Transform};
pub use registration::{FrameKey, PoseTable, Provenance};
