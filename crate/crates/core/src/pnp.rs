//! RANSAC Perspective-n-Point camera pose estimation from given 2D-3D
//! correspondences, plus a temporally constrained second pass for frames that
//! plain RANSAC cannot localize.
//!
//! The minimal solver is the classic three-point resolution: reduce the law of
//! cosines system to a quartic in the depth ratio, recover camera-frame depths
//! for each real root, and align the three camera-frame points to their world
//! positions with a rigid fit. A fourth sampled point disambiguates the up to
//! four candidates. The best consensus set is refined by damped Gauss-Newton
//! on the total squared reprojection error.
//!
//! Correspondences are expected pre-undistorted; radial coefficients on
//! [`CameraIntrinsics`] are carried as metadata only.

use nalgebra::{Matrix3, Matrix4, Schur, Vector2, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Rotation3};
use crate::registration::{FrameId, FrameKey, PoseEntry, PoseTable, Provenance};

#[derive(Debug, Error)]
pub enum PnpError {
    #[error("point is behind the camera (depth {depth:.3e})")]
    BehindCamera { depth: f64 },
    #[error("no consensus set of at least {min_inliers} inliers found in {iterations} iterations")]
    NoConsensus { min_inliers: usize, iterations: usize },
    #[error("degenerate input: {reason}")]
    DegenerateInput { reason: String },
}

/// Pinhole intrinsics in pixels. Non-empty `distortion` means the upstream
/// matcher already undistorted the observations; the coefficients are carried
/// for bookkeeping only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub distortion: Vec<f64>,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), PnpError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx <= self.width as f64
            && self.cy >= 0.0
            && self.cy <= self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(PnpError::DegenerateInput { reason: format!("invalid intrinsics {self:?}") })
        }
    }

    /// Unit bearing vector in the camera frame for a pixel.
    pub fn bearing(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0).normalize()
    }
}

/// A 2D observation of a known scan-frame 3D point.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence2D3D {
    pub pixel: Vector2<f64>,
    pub world_point: Vector3<f64>,
    pub match_score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PnPConfig {
    pub max_iterations: usize,
    /// Inlier threshold on reprojection error, pixels.
    pub reprojection_threshold: f64,
    pub min_inliers: usize,
    pub rng_seed: u64,
    /// Frame-index distance within which a localized neighbor can constrain a
    /// re-solve.
    pub temporal_window: u64,
    /// Maximum camera-center distance to the neighbor pose, meters.
    pub temporal_translation_radius: f64,
    /// Maximum rotation difference to the neighbor pose, radians.
    pub temporal_rotation_limit: f64,
}

impl Default for PnPConfig {
    fn default() -> Self {
        PnPConfig {
            max_iterations: 5000,
            reprojection_threshold: 4.0,
            min_inliers: 4,
            rng_seed: 0,
            temporal_window: 30,
            temporal_translation_radius: 1.0,
            temporal_rotation_limit: 0.5,
        }
    }
}

/// Projects a world point through a camera-to-world pose into pixels.
pub fn project(
    pose: &Pose,
    k: &CameraIntrinsics,
    world_point: &Vector3<f64>,
) -> Result<Vector2<f64>, PnpError> {
    let cam = pose.world_to_camera_point(world_point);
    if cam.z <= 0.0 {
        return Err(PnpError::BehindCamera { depth: cam.z });
    }
    Ok(Vector2::new(k.fx * cam.x / cam.z + k.cx, k.fy * cam.y / cam.z + k.cy))
}

fn reprojection_error(pose: &Pose, k: &CameraIntrinsics, c: &Correspondence2D3D) -> f64 {
    match project(pose, k, &c.world_point) {
        Ok(pix) => (pix - c.pixel).norm(),
        Err(_) => f64::INFINITY,
    }
}

/// RANSAC over minimal three-point samples (a fourth sampled point picks among
/// candidate poses), refined by damped Gauss-Newton over the consensus set.
/// Deterministic for a fixed `cfg.rng_seed`. Every index marked in the
/// returned mask reprojects within `cfg.reprojection_threshold`.
pub fn solve_pnp_ransac(
    corrs: &[Correspondence2D3D],
    k: &CameraIntrinsics,
    cfg: &PnPConfig,
) -> Result<(Pose, Vec<bool>), PnpError> {
    let min_inliers = cfg.min_inliers.max(4);
    run_ransac(corrs, k, cfg, min_inliers, None)
}

struct TemporalBound {
    center: Vector3<f64>,
    rotation: Rotation3,
    radius: f64,
    angle_limit: f64,
}

impl TemporalBound {
    fn admits(&self, pose: &Pose) -> bool {
        (pose.camera_center() - self.center).norm() <= self.radius
            && pose.rotation.angle_to(&self.rotation) <= self.angle_limit
    }
}

fn run_ransac(
    corrs: &[Correspondence2D3D],
    k: &CameraIntrinsics,
    cfg: &PnPConfig,
    min_inliers: usize,
    bound: Option<&TemporalBound>,
) -> Result<(Pose, Vec<bool>), PnpError> {
    let n = corrs.len();
    let sample_size = if bound.is_some() { 3 } else { 4 };
    if n < min_inliers || n < sample_size {
        return Err(PnpError::NoConsensus { min_inliers, iterations: 0 });
    }
    let world: Vec<Vector3<f64>> = corrs.iter().map(|c| c.world_point).collect();
    if !crate::procrustes::collinearity_check(&world, 1e-9) {
        return Err(PnpError::DegenerateInput { reason: "all world points are collinear".into() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut best: Option<(usize, f64, Pose, Vec<bool>)> = None;
    let mut saw_valid_sample = false;
    let mut needed = cfg.max_iterations;
    let mut iterations = 0usize;

    while iterations < needed.min(cfg.max_iterations) {
        iterations += 1;
        let idx = rand::seq::index::sample(&mut rng, n, sample_size).into_vec();
        let triple_world = [world[idx[0]], world[idx[1]], world[idx[2]]];
        if !crate::procrustes::collinearity_check(&triple_world, 1e-9) {
            continue;
        }
        saw_valid_sample = true;
        let bearings = [
            k.bearing(&corrs[idx[0]].pixel),
            k.bearing(&corrs[idx[1]].pixel),
            k.bearing(&corrs[idx[2]].pixel),
        ];
        let candidates = solve_p3p(&triple_world, &bearings);
        if candidates.is_empty() {
            continue;
        }

        let pose = match bound {
            // The temporal bound disambiguates and replaces the fourth point.
            Some(b) => {
                let mut admitted: Vec<Pose> =
                    candidates.into_iter().filter(|p| b.admits(p)).collect();
                if admitted.is_empty() {
                    continue;
                }
                if admitted.len() > 1 {
                    admitted.sort_by(|a, b_pose| {
                        let score = |p: &Pose| {
                            corrs.iter().map(|c| reprojection_error(p, k, c).min(1e6)).sum::<f64>()
                        };
                        score(a).partial_cmp(&score(b_pose)).unwrap()
                    });
                }
                admitted[0]
            }
            None => {
                let probe = &corrs[idx[3]];
                candidates
                    .into_iter()
                    .min_by(|a, b_pose| {
                        reprojection_error(a, k, probe)
                            .partial_cmp(&reprojection_error(b_pose, k, probe))
                            .unwrap()
                    })
                    .unwrap()
            }
        };

        let mut mask = vec![false; n];
        let mut count = 0usize;
        let mut residual_sum = 0.0;
        for (i, c) in corrs.iter().enumerate() {
            let e = reprojection_error(&pose, k, c);
            if e < cfg.reprojection_threshold {
                mask[i] = true;
                count += 1;
                residual_sum += e;
            }
        }
        if count < min_inliers.min(3) || count == 0 {
            continue;
        }
        let mean_residual = residual_sum / count as f64;
        let better = match &best {
            None => true,
            Some((bc, br, _, _)) => count > *bc || (count == *bc && mean_residual < *br),
        };
        if better {
            best = Some((count, mean_residual, pose, mask));
            // Standard adaptive termination at 0.9999 confidence.
            let w = count as f64 / n as f64;
            let denom = (1.0 - w.powi(sample_size as i32)).max(1e-12).ln();
            if w >= 1.0 {
                break;
            }
            needed = ((1e-4f64).ln() / denom).ceil().max(1.0) as usize;
        }
    }

    let Some((count, _, pose, mask)) = best else {
        if saw_valid_sample {
            return Err(PnpError::NoConsensus { min_inliers, iterations });
        }
        return Err(PnpError::DegenerateInput {
            reason: "all sampled triples were collinear".into(),
        });
    };
    if count < min_inliers {
        return Err(PnpError::NoConsensus { min_inliers, iterations });
    }

    // Refine on the consensus set and let the mask settle.
    let mut pose = pose;
    let mut mask = mask;
    for _ in 0..3 {
        let refined = refine_pose(&pose, k, corrs, &mask);
        let refined = match bound {
            Some(b) if !b.admits(&refined) => pose,
            _ => refined,
        };
        let new_mask: Vec<bool> = corrs
            .iter()
            .map(|c| reprojection_error(&refined, k, c) < cfg.reprojection_threshold)
            .collect();
        let new_count = new_mask.iter().filter(|m| **m).count();
        if new_count < min_inliers {
            break;
        }
        let stable = new_mask == mask;
        pose = refined;
        mask = new_mask;
        if stable {
            break;
        }
    }
    if mask.iter().filter(|m| **m).count() < min_inliers {
        return Err(PnpError::NoConsensus { min_inliers, iterations });
    }
    Ok((pose, mask))
}

/// For each unlocalized frame with a localized neighbor within the temporal
/// window, re-runs RANSAC accepting only hypotheses near the neighbor's pose.
/// With the pose bounded, three inliers (the minimal-solver floor) are enough;
/// the bound supplies the disambiguation that a larger consensus normally
/// provides. Existing entries are never modified.
pub fn relocalize_temporal(
    video_id: &str,
    frames: &[(FrameId, Vec<Correspondence2D3D>)],
    localized: &PoseTable,
    k: &CameraIntrinsics,
    cfg: &PnPConfig,
) -> PoseTable {
    let mut out = localized.clone();
    let anchored: Vec<FrameId> = localized.video_frames(video_id);
    if anchored.is_empty() {
        return out;
    }

    for (frame_id, corrs) in frames {
        let key = FrameKey::new(video_id, *frame_id);
        if localized.get(&key).map(|e| e.valid).unwrap_or(false) {
            continue;
        }
        // Nearest localized frame by index distance, ties to the earlier one.
        let neighbor = anchored
            .iter()
            .min_by_key(|f| (f.abs_diff(*frame_id), **f))
            .copied()
            .filter(|f| f.abs_diff(*frame_id) <= cfg.temporal_window);
        let Some(neighbor) = neighbor else { continue };
        let neighbor_pose = match localized.get(&FrameKey::new(video_id, neighbor)) {
            Some(e) if e.valid => e.pose,
            _ => continue,
        };
        let bound = TemporalBound {
            center: neighbor_pose.camera_center(),
            rotation: neighbor_pose.rotation,
            radius: cfg.temporal_translation_radius,
            angle_limit: cfg.temporal_rotation_limit,
        };
        if let Ok((pose, _)) = run_ransac(corrs, k, cfg, 3, Some(&bound)) {
            out.insert(key, PoseEntry::valid(pose, Provenance::PnpTemporal));
        }
    }
    out
}

/// Rigid fit mapping three world points onto three camera-frame points;
/// returns world-to-camera `(R, t)`.
fn kabsch_rigid_3(world: &[Vector3<f64>; 3], cam: &[Vector3<f64>; 3]) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let cw = (world[0] + world[1] + world[2]) / 3.0;
    let cc = (cam[0] + cam[1] + cam[2]) / 3.0;
    let mut h = Matrix3::zeros();
    for i in 0..3 {
        h += (world[i] - cw) * (cam[i] - cc).transpose();
    }
    let svd = h.try_svd(true, true, f64::EPSILON, 250)?;
    let u = svd.u?;
    let v = svd.v_t?.transpose();
    let det = (v * u.transpose()).determinant();
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
    let r = v * d * u.transpose();
    Some((r, cc - r * cw))
}

/// Real roots of `c4 x^4 + c3 x^3 + c2 x^2 + c1 x + c0 = 0` via the companion
/// matrix.
fn real_quartic_roots(c4: f64, c3: f64, c2: f64, c1: f64, c0: f64) -> Vec<f64> {
    if c4.abs() < 1e-14 {
        // Degenerate leading coefficient; fall back on the cubic companion.
        if c3.abs() < 1e-14 {
            return Vec::new();
        }
        let mut m = Matrix3::zeros();
        m[(0, 0)] = -c2 / c3;
        m[(0, 1)] = -c1 / c3;
        m[(0, 2)] = -c0 / c3;
        m[(1, 0)] = 1.0;
        m[(2, 1)] = 1.0;
        let Some(schur) = Schur::try_new(m, f64::EPSILON, 500) else {
            return Vec::new();
        };
        let eig = schur.complex_eigenvalues();
        return eig.iter().filter(|e| e.im.abs() < 1e-8).map(|e| e.re).collect();
    }
    let mut m = Matrix4::zeros();
    m[(0, 0)] = -c3 / c4;
    m[(0, 1)] = -c2 / c4;
    m[(0, 2)] = -c1 / c4;
    m[(0, 3)] = -c0 / c4;
    m[(1, 0)] = 1.0;
    m[(2, 1)] = 1.0;
    m[(3, 2)] = 1.0;
    let Some(schur) = Schur::try_new(m, f64::EPSILON, 500) else {
        return Vec::new();
    };
    schur.complex_eigenvalues().iter().filter(|e| e.im.abs() < 1e-8).map(|e| e.re).collect()
}

/// Three-point pose candidates (camera-to-world) for world points and their
/// unit bearing vectors.
fn solve_p3p(world: &[Vector3<f64>; 3], bearings: &[Vector3<f64>; 3]) -> Vec<Pose> {
    let a = (world[1] - world[2]).norm();
    let b = (world[0] - world[2]).norm();
    let c = (world[0] - world[1]).norm();
    if a < 1e-12 || b < 1e-12 || c < 1e-12 {
        return Vec::new();
    }

    let cos_alpha = bearings[1].dot(&bearings[2]);
    let cos_beta = bearings[0].dot(&bearings[2]);
    let cos_gamma = bearings[0].dot(&bearings[1]);

    let a2 = a * a;
    let b2 = b * b;
    let c2 = c * c;
    let d = (b2 - a2) / c2;
    let e = b2 / c2;

    // v * D(u) = N(u); substituting v back yields the quartic
    // N^2 - 2 cos(beta) N D + E D^2 = 0 in the depth ratio u.
    let n_poly = [1.0 - d, 2.0 * d * cos_gamma, -(1.0 + d)];
    let d_poly = [2.0 * cos_beta, -2.0 * cos_alpha];
    let e_poly = [1.0 - e, 2.0 * e * cos_gamma, -e];

    let mut quartic = [0.0f64; 5];
    for i in 0..3 {
        for j in 0..3 {
            quartic[i + j] += n_poly[i] * n_poly[j];
        }
    }
    for i in 0..3 {
        for j in 0..2 {
            quartic[i + j] -= 2.0 * cos_beta * n_poly[i] * d_poly[j];
        }
    }
    let mut d2 = [0.0f64; 3];
    for i in 0..2 {
        for j in 0..2 {
            d2[i + j] += d_poly[i] * d_poly[j];
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            quartic[i + j] += e_poly[i] * d2[j];
        }
    }

    let mut poses = Vec::new();
    for u in real_quartic_roots(quartic[4], quartic[3], quartic[2], quartic[1], quartic[0]) {
        if u <= 0.0 {
            continue;
        }
        let denom = d_poly[0] + d_poly[1] * u;
        if denom.abs() < 1e-12 {
            continue;
        }
        let v = (n_poly[0] + n_poly[1] * u + n_poly[2] * u * u) / denom;
        if v <= 0.0 {
            continue;
        }
        let k_val = 1.0 + u * u - 2.0 * u * cos_gamma;
        if k_val <= 1e-12 {
            continue;
        }
        let s1 = (c2 / k_val).sqrt();
        let depths = [s1, u * s1, v * s1];
        let cam = [bearings[0] * depths[0], bearings[1] * depths[1], bearings[2] * depths[2]];
        if let Some((r, t)) = kabsch_rigid_3(world, &cam) {
            if let Ok(rotation) = Rotation3::from_matrix(&r) {
                poses.push(Pose::from_world_to_camera(rotation, t));
            }
        }
    }
    poses
}

/// Damped Gauss-Newton on the total squared reprojection error over the
/// masked correspondences.
fn refine_pose(
    initial: &Pose,
    k: &CameraIntrinsics,
    corrs: &[Correspondence2D3D],
    mask: &[bool],
) -> Pose {
    let selected: Vec<&Correspondence2D3D> =
        corrs.iter().zip(mask).filter_map(|(c, m)| m.then_some(c)).collect();
    if selected.len() < 3 {
        return *initial;
    }

    let cost = |pose: &Pose| -> f64 {
        let mut total = 0.0;
        for c in &selected {
            let cam = pose.world_to_camera_point(&c.world_point);
            if cam.z <= 1e-9 {
                return f64::INFINITY;
            }
            let pix = Vector2::new(k.fx * cam.x / cam.z + k.cx, k.fy * cam.y / cam.z + k.cy);
            total += (pix - c.pixel).norm_squared();
        }
        total
    };

    let mut pose = *initial;
    let mut current = cost(&pose);
    let mut lambda = 1e-6;
    for _ in 0..50 {
        // Accumulate normal equations for the 6-vector (rotation, center).
        let mut jtj = nalgebra::Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        let r_t = pose.rotation.inverse().matrix();
        for c in &selected {
            let cam = pose.world_to_camera_point(&c.world_point);
            if cam.z <= 1e-9 {
                continue;
            }
            let inv_z = 1.0 / cam.z;
            let pix = Vector2::new(k.fx * cam.x * inv_z + k.cx, k.fy * cam.y * inv_z + k.cy);
            let residual = pix - c.pixel;
            let j_pix = nalgebra::Matrix2x3::new(
                k.fx * inv_z,
                0.0,
                -k.fx * cam.x * inv_z * inv_z,
                0.0,
                k.fy * inv_z,
                -k.fy * cam.y * inv_z * inv_z,
            );
            let skew = Matrix3::new(
                0.0, -cam.z, cam.y,
                cam.z, 0.0, -cam.x,
                -cam.y, cam.x, 0.0,
            );
            let mut jac = nalgebra::Matrix2x6::<f64>::zeros();
            // d(cam)/d(omega) = [cam]x for the right-multiplied update
            // R <- R exp([omega]x); d(cam)/d(center) = -R^T.
            jac.fixed_view_mut::<2, 3>(0, 0).copy_from(&(j_pix * skew));
            jac.fixed_view_mut::<2, 3>(0, 3).copy_from(&(j_pix * (-r_t)));
            jtj += jac.transpose() * jac;
            jtr += jac.transpose() * residual;
        }

        let mut accepted = false;
        for _ in 0..8 {
            let mut damped = jtj;
            for i in 0..6 {
                damped[(i, i)] += lambda * (jtj[(i, i)].abs() + 1e-12);
            }
            let Some(step) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let omega = Vector3::new(step[0], step[1], step[2]);
            let delta_c = Vector3::new(step[3], step[4], step[5]);
            let candidate = Pose::new(
                pose.rotation.compose(&Rotation3::from_scaled_axis(&omega)),
                pose.translation + delta_c,
            );
            let new_cost = cost(&candidate);
            if new_cost < current {
                let rel = (current - new_cost) / current.max(1e-300);
                pose = candidate;
                current = new_cost;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                if step.norm() < 1e-14 || rel < 1e-15 {
                    return pose;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    pose
}
