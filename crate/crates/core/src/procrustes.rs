//! Weighted least-squares similarity alignment of corresponding 3D point sets,
//! plus a RANSAC-robust wrapper for anchor sets that contain outliers.
//!
//! Given corresponding points `P = {p_k}` and `Q = {q_k}` with positive
//! weights `w_k`, the closed-form solver returns the `(s, R, T)` minimizing
//! `sum_k w_k ||(s R p_k + T) - q_k||^2`:
//!
//! 1. weighted centroids of both sets,
//! 2. covariance `S = X W Y^T` of the centered vectors,
//! 3. `SVD(S) = U S V^T`, `R = V diag(1, 1, det(V U^T)) U^T`,
//! 4. scale `s` as the ratio of weighted average distances to the centroids,
//! 5. `T = q_hat - s R p_hat`.
//!
//! At least three mutually non-collinear source points are required.

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Rotation3, Sim3Transform};

/// Guard for the scale denominator: spreads below this are treated as
/// degenerate rather than producing huge scales.
pub const DEFAULT_SCALE_EPSILON: f64 = 1e-7;

/// Ratio of second to first singular value below which a point set counts as
/// collinear.
pub const DEFAULT_COLLINEARITY_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum ProcrustesError {
    #[error("degenerate input: {reason}")]
    DegenerateInput { reason: String },
    #[error("SVD failed to converge")]
    NumericalFailure,
    #[error("no consensus set of at least {min_inliers} inliers found in {iterations} iterations")]
    NoConsensus { min_inliers: usize, iterations: usize },
}

/// Corresponding 3D point sets: `source` in the relative reconstruction frame
/// (arbitrary units), `target` in the scan frame (meters).
#[derive(Debug, Clone)]
pub struct CorrespondenceSet3D {
    source: Vec<Vector3<f64>>,
    target: Vec<Vector3<f64>>,
    weights: Vec<f64>,
}

impl CorrespondenceSet3D {
    /// Pairs the two sets with uniform weight 1.
    pub fn new(
        source: Vec<Vector3<f64>>,
        target: Vec<Vector3<f64>>,
    ) -> Result<Self, ProcrustesError> {
        let weights = vec![1.0; source.len()];
        Self::with_weights(source, target, weights)
    }

    pub fn with_weights(
        source: Vec<Vector3<f64>>,
        target: Vec<Vector3<f64>>,
        weights: Vec<f64>,
    ) -> Result<Self, ProcrustesError> {
        if source.is_empty() || source.len() != target.len() || source.len() != weights.len() {
            return Err(ProcrustesError::DegenerateInput {
                reason: format!(
                    "correspondence lengths must match and be non-empty (source {}, target {}, weights {})",
                    source.len(),
                    target.len(),
                    weights.len()
                ),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(ProcrustesError::DegenerateInput {
                reason: "weights must be positive and finite".into(),
            });
        }
        let finite =
            |pts: &[Vector3<f64>]| pts.iter().all(|p| p.iter().all(|v| v.is_finite()));
        if !finite(&source) || !finite(&target) {
            return Err(ProcrustesError::DegenerateInput {
                reason: "non-finite coordinate".into(),
            });
        }
        Ok(CorrespondenceSet3D { source, target, weights })
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn source(&self) -> &[Vector3<f64>] {
        &self.source
    }

    pub fn target(&self) -> &[Vector3<f64>] {
        &self.target
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn subset(&self, indices: &[usize]) -> CorrespondenceSet3D {
        CorrespondenceSet3D {
            source: indices.iter().map(|&i| self.source[i]).collect(),
            target: indices.iter().map(|&i| self.target[i]).collect(),
            weights: indices.iter().map(|&i| self.weights[i]).collect(),
        }
    }
}

/// Configuration for [`solve_robust_procrustes`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustAlignConfig {
    pub max_iterations: usize,
    /// Inlier threshold as a distance in the target frame, meters.
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub rng_seed: u64,
    pub collinearity_tolerance: f64,
    pub scale_epsilon: f64,
}

impl Default for RobustAlignConfig {
    fn default() -> Self {
        RobustAlignConfig {
            max_iterations: 2000,
            inlier_threshold: 0.25,
            min_inliers: 3,
            rng_seed: 0,
            collinearity_tolerance: DEFAULT_COLLINEARITY_TOLERANCE,
            scale_epsilon: DEFAULT_SCALE_EPSILON,
        }
    }
}

/// True iff the centered points span at least two dimensions: the second
/// singular value of the centered point matrix must exceed
/// `tolerance` times the first.
pub fn collinearity_check(points: &[Vector3<f64>], tolerance: f64) -> bool {
    if points.len() < 3 {
        return false;
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    // Eigenvalues of the covariance are squared singular values of the
    // centered matrix.
    let Some(eigen) = cov.try_symmetric_eigen(f64::EPSILON, 250) else {
        return false;
    };
    let mut eig: Vec<f64> = eigen.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let sigma1 = eig[0].sqrt();
    let sigma2 = eig[1].sqrt();
    sigma2 > tolerance * sigma1
}

/// Closed-form weighted similarity alignment with default guards. See the
/// module docs for the algorithm.
pub fn solve_weighted_procrustes(c: &CorrespondenceSet3D) -> Result<Sim3Transform, ProcrustesError> {
    solve_weighted_procrustes_with(c, DEFAULT_SCALE_EPSILON, DEFAULT_COLLINEARITY_TOLERANCE)
}

/// Closed-form solver with explicit scale-denominator guard and collinearity
/// tolerance.
pub fn solve_weighted_procrustes_with(
    c: &CorrespondenceSet3D,
    scale_epsilon: f64,
    collinearity_tolerance: f64,
) -> Result<Sim3Transform, ProcrustesError> {
    if c.len() < 3 {
        return Err(ProcrustesError::DegenerateInput {
            reason: format!("need at least 3 correspondences, got {}", c.len()),
        });
    }
    if !collinearity_check(&c.source, collinearity_tolerance) {
        return Err(ProcrustesError::DegenerateInput {
            reason: "source points are collinear".into(),
        });
    }

    let weight_sum: f64 = c.weights.iter().sum();
    let mut p_hat = Vector3::zeros();
    let mut q_hat = Vector3::zeros();
    for ((p, q), w) in c.source.iter().zip(&c.target).zip(&c.weights) {
        p_hat += *w * p;
        q_hat += *w * q;
    }
    p_hat /= weight_sum;
    q_hat /= weight_sum;

    let mut covariance = Matrix3::zeros();
    let mut x_bar = 0.0;
    let mut y_bar = 0.0;
    for ((p, q), w) in c.source.iter().zip(&c.target).zip(&c.weights) {
        let x = p - p_hat;
        let y = q - q_hat;
        covariance += *w * x * y.transpose();
        x_bar += *w * x.norm();
        y_bar += *w * y.norm();
    }
    x_bar /= weight_sum;
    y_bar /= weight_sum;

    let svd = covariance
        .try_svd(true, true, f64::EPSILON, 250)
        .ok_or(ProcrustesError::NumericalFailure)?;
    let u = svd.u.ok_or(ProcrustesError::NumericalFailure)?;
    let v_t = svd.v_t.ok_or(ProcrustesError::NumericalFailure)?;
    let v = v_t.transpose();
    let det = (v * u.transpose()).determinant();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
    let r = v * correction * u.transpose();
    let rotation = Rotation3::from_matrix(&r).map_err(|_| ProcrustesError::NumericalFailure)?;

    let scale = y_bar / x_bar.max(scale_epsilon);
    if !scale.is_finite() || scale <= 0.0 {
        return Err(ProcrustesError::DegenerateInput {
            reason: format!("degenerate scale {scale} (target spread {y_bar:.3e})"),
        });
    }
    let translation = q_hat - scale * rotation.rotate(&p_hat);
    Ok(Sim3Transform { scale, rotation, translation })
}

/// The weighted objective `sum_k w_k ||(s R p_k + T) - q_k||^2` at `t`.
pub fn weighted_objective(c: &CorrespondenceSet3D, t: &Sim3Transform) -> f64 {
    c.source
        .iter()
        .zip(&c.target)
        .zip(&c.weights)
        .map(|((p, q), w)| w * (t.transform_point(p) - q).norm_squared())
        .sum()
}

/// RANSAC over minimal 3-point samples followed by a weighted refit on the
/// consensus set. Deterministic for a fixed `cfg.rng_seed`; the best
/// hypothesis is chosen by `(inlier count, mean inlier residual, sample
/// index)`. The returned mask marks the final consensus set.
pub fn solve_robust_procrustes(
    c: &CorrespondenceSet3D,
    cfg: &RobustAlignConfig,
) -> Result<(Sim3Transform, Vec<bool>), ProcrustesError> {
    let n = c.len();
    let min_inliers = cfg.min_inliers.max(3);
    if n < 3 {
        return Err(ProcrustesError::DegenerateInput {
            reason: format!("need at least 3 correspondences, got {n}"),
        });
    }
    if !collinearity_check(&c.source, cfg.collinearity_tolerance) {
        return Err(ProcrustesError::DegenerateInput {
            reason: "source points are collinear".into(),
        });
    }
    if n < min_inliers {
        return Err(ProcrustesError::NoConsensus { min_inliers, iterations: 0 });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let indices: Vec<usize> = (0..n).collect();

    let mut best: Option<(usize, f64, Vec<bool>)> = None; // (count, mean residual, mask)
    for _ in 0..cfg.max_iterations {
        let sample: Vec<usize> = indices.choose_multiple(&mut rng, 3).copied().collect();
        let sample_points: Vec<Vector3<f64>> = sample.iter().map(|&i| c.source[i]).collect();
        if !collinearity_check(&sample_points, cfg.collinearity_tolerance) {
            continue;
        }
        let Ok(hypothesis) =
            solve_weighted_procrustes_with(&c.subset(&sample), cfg.scale_epsilon, cfg.collinearity_tolerance)
        else {
            continue;
        };

        let mut mask = vec![false; n];
        let mut count = 0usize;
        let mut residual_sum = 0.0;
        for (i, m) in mask.iter_mut().enumerate() {
            let r = (hypothesis.transform_point(&c.source[i]) - c.target[i]).norm();
            if r < cfg.inlier_threshold {
                *m = true;
                count += 1;
                residual_sum += r;
            }
        }
        if count < min_inliers {
            continue;
        }
        let mean_residual = residual_sum / count as f64;
        let better = match &best {
            None => true,
            Some((best_count, best_residual, _)) => {
                count > *best_count || (count == *best_count && mean_residual < *best_residual)
            }
        };
        if better {
            best = Some((count, mean_residual, mask));
        }
    }

    let (_, _, mut mask) = best.ok_or(ProcrustesError::NoConsensus {
        min_inliers,
        iterations: cfg.max_iterations,
    })?;

    // Refit on the consensus set and let the mask settle; a couple of rounds
    // is always enough in practice and keeps the result deterministic.
    let mut transform = refit(c, &mask, cfg)?;
    for _ in 0..5 {
        let new_mask: Vec<bool> = (0..n)
            .map(|i| (transform.transform_point(&c.source[i]) - c.target[i]).norm() < cfg.inlier_threshold)
            .collect();
        if new_mask == mask {
            break;
        }
        let count = new_mask.iter().filter(|m| **m).count();
        if count < min_inliers {
            break;
        }
        match refit(c, &new_mask, cfg) {
            Ok(t) => {
                transform = t;
                mask = new_mask;
            }
            Err(_) => break,
        }
    }

    if mask.iter().filter(|m| **m).count() < min_inliers {
        return Err(ProcrustesError::NoConsensus { min_inliers, iterations: cfg.max_iterations });
    }
    Ok((transform, mask))
}

fn refit(
    c: &CorrespondenceSet3D,
    mask: &[bool],
    cfg: &RobustAlignConfig,
) -> Result<Sim3Transform, ProcrustesError> {
    let selected: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.then_some(i))
        .collect();
    solve_weighted_procrustes_with(&c.subset(&selected), cfg.scale_epsilon, cfg.collinearity_tolerance)
}
