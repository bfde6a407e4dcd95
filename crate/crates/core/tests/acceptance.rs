//! Acceptance suite: one integration test per release criterion, each
//! printing a `[PASS]` line (visible with `--nocapture`). Tolerances are
//! stated inline next to each assertion.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vq3d_core::geometry::{Box3, Rotation3, Sim3Transform};
use vq3d_core::io;
use vq3d_core::metrics::{
    average_precision_3d, evaluate, iou_3d, success, MetricsConfig,
};
use vq3d_core::pnp::{solve_pnp_ransac, PnPConfig};
use vq3d_core::predict::{predict_queries, PredictOptions, Prediction};
use vq3d_core::procrustes::{
    solve_robust_procrustes, solve_weighted_procrustes, weighted_objective, CorrespondenceSet3D,
    RobustAlignConfig,
};
use vq3d_core::registration::{
    apply_3d_constraints, apply_registration, filter_outliers, fit_registration, fuse, pose_recall,
    FrameKey, FusionPolicy, PoseEntry, PoseTable, Provenance, RegistrationError, ScanGeometry,
};
use vq3d_core::synth::{
    self, expected_report, generate, pin_predictions_to_annotation, pnp_test_scene,
    OraclePrediction, SynthConfig,
};

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3 {
    synth::sample_rotation(rng)
}

fn random_sim3(rng: &mut ChaCha8Rng) -> Sim3Transform {
    Sim3Transform::new(
        rng.gen_range(0.5..2.0),
        random_rotation(rng),
        Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
    )
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| {
            Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))
        })
        .collect()
}

/// Criterion 1: on 100 seeded noiseless correspondence sets (n = 50) the
/// recovered (s, R, T) matches the generator within 1e-9 per component and
/// the weighted objective is at most 1e-16, in under one second total.
#[test]
fn criterion_01_procrustes_exactness() {
    let start = Instant::now();
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + trial);
        let generator = random_sim3(&mut rng);
        let source = random_points(&mut rng, 50);
        let target: Vec<_> = source.iter().map(|p| generator.transform_point(p)).collect();
        let c = CorrespondenceSet3D::new(source, target).unwrap();
        let t = solve_weighted_procrustes(&c).unwrap();

        assert!((t.scale - generator.scale).abs() < 1e-9, "trial {trial}: scale");
        let dr = (t.rotation.matrix() - generator.rotation.matrix()).abs().max();
        assert!(dr < 1e-9, "trial {trial}: rotation component error {dr}");
        let dt = (t.translation - generator.translation).abs().max();
        assert!(dt < 1e-9, "trial {trial}: translation component error {dt}");
        let objective = weighted_objective(&c, &t);
        assert!(objective <= 1e-16, "trial {trial}: objective {objective}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}, budget 1 s");
    println!("[PASS] criterion 1: procrustes exactness on 100 noiseless sets in {elapsed:?}");
}

/// Criterion 2: a mirrored point set still yields det(R) = +1, and the
/// returned rotation is the least-squares optimum among proper rotations
/// (1000 random rotation replacements never improve the objective).
#[test]
fn criterion_02_reflection_guard() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_000);
    let source = random_points(&mut rng, 30);
    // Reflection across the xy plane; the unconstrained optimum has det -1.
    let target: Vec<_> = source.iter().map(|p| Vector3::new(p.x, p.y, -p.z)).collect();
    let c = CorrespondenceSet3D::new(source.clone(), target.clone()).unwrap();
    let t = solve_weighted_procrustes(&c).unwrap();
    assert!(
        (t.rotation.matrix().determinant() - 1.0).abs() < 1e-9,
        "determinant {}",
        t.rotation.matrix().determinant()
    );

    // Replace the rotation, re-optimize the translation for it, keep the
    // scale: no proper rotation may beat the returned one.
    let n = source.len() as f64;
    let p_hat: Vector3<f64> = source.iter().sum::<Vector3<f64>>() / n;
    let q_hat: Vector3<f64> = target.iter().sum::<Vector3<f64>>() / n;
    let best = weighted_objective(&c, &t);
    for i in 0..1000 {
        let rotation = random_rotation(&mut rng);
        let translation = q_hat - t.scale * rotation.rotate(&p_hat);
        let candidate = Sim3Transform::new(t.scale, rotation, translation);
        let objective = weighted_objective(&c, &candidate);
        assert!(objective >= best - 1e-12, "perturbation {i} improved: {objective} < {best}");
    }
    println!("[PASS] criterion 2: reflection guard, 1000 rotation perturbations never improve");
}

/// Criterion 3: with 30% injected outliers and inlier noise sigma = 0.01 m,
/// the transform is recovered within 5 sigma / sqrt(n) and the inlier mask
/// exactly excludes all injected outliers, in 20 of 20 seeded trials.
#[test]
fn criterion_03_robust_alignment() {
    let sigma = 0.01;
    let n_clean = 35;
    let n_outliers = 15; // 15 of 50 = 30%
    let tolerance = 5.0 * sigma / (n_clean as f64).sqrt();

    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(30_000 + trial);
        let generator = random_sim3(&mut rng);
        let mut source = random_points(&mut rng, n_clean);
        let mut target: Vec<_> = source
            .iter()
            .map(|p| {
                let mut normal = || {
                    let u1: f64 = rng.gen_range(1e-12..1.0);
                    let u2: f64 = rng.gen_range(0.0..1.0);
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                };
                generator.transform_point(p) + Vector3::new(normal(), normal(), normal()) * sigma
            })
            .collect();
        for _ in 0..n_outliers {
            source.push(Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ));
            target.push(Vector3::new(
                rng.gen_range(30.0..60.0),
                rng.gen_range(30.0..60.0),
                rng.gen_range(30.0..60.0),
            ));
        }
        let c = CorrespondenceSet3D::new(source, target).unwrap();
        let cfg = RobustAlignConfig { inlier_threshold: 0.05, rng_seed: trial, ..Default::default() };
        let (t, mask) = solve_robust_procrustes(&c, &cfg).unwrap();

        assert!((t.scale - generator.scale).abs() < tolerance, "trial {trial}: scale");
        assert!(t.rotation.angle_to(&generator.rotation) < tolerance, "trial {trial}: rotation");
        assert!(
            (t.translation - generator.translation).norm() < tolerance,
            "trial {trial}: translation"
        );
        assert!(mask[..n_clean].iter().all(|m| *m), "trial {trial}: clean pair dropped");
        assert!(mask[n_clean..].iter().all(|m| !*m), "trial {trial}: outlier kept");
    }
    println!(
        "[PASS] criterion 3: robust alignment within 5s/sqrt(n) = {tolerance:.2e}, masks exact, 20/20 trials"
    );
}

/// Criterion 4: noiseless synthetic projections recover the pose within
/// 1e-6 m / 1e-6 rad over 100 seeded trials; with 30% outliers and a 2 px
/// threshold, within 1e-3 m / 1e-3 rad.
#[test]
fn criterion_04_pnp_round_trip() {
    for trial in 0..100u64 {
        let (pose, k, corrs) = pnp_test_scene(40_000 + trial, 20, 0);
        let cfg = PnPConfig { rng_seed: trial, ..Default::default() };
        let (estimate, _) = solve_pnp_ransac(&corrs, &k, &cfg).unwrap();
        let dt = (estimate.camera_center() - pose.camera_center()).norm();
        let dr = estimate.rotation.angle_to(&pose.rotation);
        assert!(dt < 1e-6, "trial {trial}: clean translation error {dt}");
        assert!(dr < 1e-6, "trial {trial}: clean rotation error {dr}");
    }

    for trial in 0..100u64 {
        let (pose, k, corrs) = pnp_test_scene(41_000 + trial, 21, 9); // 9 of 30 = 30%
        let cfg = PnPConfig { reprojection_threshold: 2.0, rng_seed: trial, ..Default::default() };
        let (estimate, _) = solve_pnp_ransac(&corrs, &k, &cfg).unwrap();
        let dt = (estimate.camera_center() - pose.camera_center()).norm();
        let dr = estimate.rotation.angle_to(&pose.rotation);
        assert!(dt < 1e-3, "trial {trial}: outlier translation error {dt}");
        assert!(dr < 1e-3, "trial {trial}: outlier rotation error {dr}");
    }
    println!("[PASS] criterion 4: pnp round trip, 100 clean + 100 outlier trials");
}

/// Criterion 5: over 50 seeded dropout patterns, fused recall is never below
/// either input and is strictly greater whenever neither valid-frame set
/// contains the other (the set-union reading of the merged-configuration
/// claim).
#[test]
fn criterion_05_fusion_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(50_000);
    let pose = vq3d_core::Pose::identity();
    let mut strict_cases = 0;
    for pattern in 0..50 {
        let mut video = PoseTable::new();
        let mut scan = PoseTable::new();
        let mut totals: BTreeMap<String, u64> = BTreeMap::new();
        for v in 0..5 {
            let vid = format!("v{v}");
            totals.insert(vid.clone(), 12);
            // Video config drops whole videos, scan config drops frames.
            let video_covers = rng.gen_bool(0.5);
            for f in 0..12u64 {
                if video_covers && rng.gen_bool(0.85) {
                    video.insert(
                        FrameKey::new(&vid, f),
                        PoseEntry::valid(pose, Provenance::VideoProcrustes),
                    );
                }
                if rng.gen_bool(0.55) {
                    scan.insert(
                        FrameKey::new(&vid, f),
                        PoseEntry::valid(pose, Provenance::ScanProcrustes),
                    );
                }
            }
        }
        let fused = fuse(&[video.clone(), scan.clone()], &FusionPolicy::default());
        let rv = pose_recall(&video, &totals).unwrap();
        let rs = pose_recall(&scan, &totals).unwrap();
        let rf = pose_recall(&fused, &totals).unwrap();

        let best_frame = rv.frame_rate_pct.max(rs.frame_rate_pct);
        assert!(rf.frame_rate_pct >= best_frame - 1e-12, "pattern {pattern}: frame recall dropped");
        assert!(
            rf.video_rate_pct >= rv.video_rate_pct.max(rs.video_rate_pct) - 1e-12,
            "pattern {pattern}: video recall dropped"
        );

        let keys = |t: &PoseTable| -> BTreeSet<FrameKey> {
            t.iter().filter(|(_, e)| e.valid).map(|(k, _)| k.clone()).collect()
        };
        let video_keys = keys(&video);
        let scan_keys = keys(&scan);
        let neither_contains =
            !video_keys.is_subset(&scan_keys) && !scan_keys.is_subset(&video_keys);
        if neither_contains {
            strict_cases += 1;
            assert!(
                rf.frame_rate_pct > best_frame,
                "pattern {pattern}: union should beat both configs strictly"
            );
        }
    }
    assert!(strict_cases >= 10, "dropout generator produced too few strict cases: {strict_cases}");
    println!("[PASS] criterion 5: fusion monotonicity on 50 patterns ({strict_cases} strict)");
}

/// Criterion 6: a video with fewer than 3 anchors fails video-config
/// registration with InsufficientAnchors and is rescued end to end by the
/// scan configuration.
#[test]
fn criterion_06_scan_config_rescue() {
    let cfg = SynthConfig { rng_seed: 60, num_videos: 3, frames_per_video: 20, ..Default::default() };
    let mut scene = generate(&cfg);
    // Leave the starved video exactly 2 anchors: one short of the minimum.
    scene.anchors.get_mut("v0").unwrap().frames.truncate(2);

    let align = RobustAlignConfig::default();
    let starved = scene.anchors["v0"].to_pose_table();
    match fit_registration(&scene.video_recons["v0"], &starved, &align) {
        Err(RegistrationError::InsufficientAnchors { found }) => assert_eq!(found, 2),
        other => panic!("expected InsufficientAnchors, got {other:?}"),
    }

    let mut tables = Vec::new();
    for video in ["v1", "v2"] {
        let anchors = scene.anchors[video].to_pose_table();
        let (t, _) = fit_registration(&scene.video_recons[video], &anchors, &align).unwrap();
        tables.push(apply_registration(&scene.video_recons[video], &t, Provenance::VideoProcrustes));
    }
    let all_anchors =
        io::anchors_to_pose_table(&scene.anchors.values().cloned().collect::<Vec<_>>());
    let (scan_t, _) = fit_registration(&scene.scan_recon, &all_anchors, &align).unwrap();
    tables.push(apply_registration(&scene.scan_recon, &scan_t, Provenance::ScanProcrustes));

    let fused = fuse(&tables, &FusionPolicy::default());
    for f in 0..cfg.frames_per_video {
        let entry = fused.get(&FrameKey::new("v0", f)).expect("starved video covered");
        assert!(entry.valid);
        assert_eq!(entry.provenance, Provenance::ScanProcrustes);
        let gt = &scene.ground_truth.get(&FrameKey::new("v0", f)).unwrap().pose;
        assert!((entry.pose.camera_center() - gt.camera_center()).norm() < 1e-6);
    }

    // The rescue carries through to predictions for the starved video.
    let mut scans = BTreeMap::new();
    scans.insert(scene.scan.scan_id.clone(), scene.scan.clone());
    let preds = predict_queries(&scene.queries, &fused, &scans, &PredictOptions::default()).unwrap();
    for p in preds.iter().filter(|p| p.query_id.starts_with("q0_")) {
        assert!(p.pose_available, "query {} not rescued", p.query_id);
    }
    println!("[PASS] criterion 6: scan configuration rescues a video with 2 anchors end to end");
}

/// Criterion 7: success() agrees with an independently coded inequality on
/// 100_000 random configurations, and the comparison stays strict at exact
/// equality.
#[test]
fn criterion_07_success_oracle_equivalence() {
    // Oracle written with scalar arithmetic only, no shared vector helpers.
    let oracle = |pred: [f64; 3], c1: [f64; 3], c2: [f64; 3], delta: f64| -> bool {
        let mx = (c1[0] + c2[0]) / 2.0 - pred[0];
        let my = (c1[1] + c2[1]) / 2.0 - pred[1];
        let mz = (c1[2] + c2[2]) / 2.0 - pred[2];
        let lhs = (mx * mx + my * my + mz * mz).sqrt();
        let bx = c1[0] - c2[0];
        let by = c1[1] - c2[1];
        let bz = c1[2] - c2[2];
        let rhs = 6.0 * ((bx * bx + by * by + bz * bz).sqrt() + delta);
        lhs < rhs
    };

    let mut rng = ChaCha8Rng::seed_from_u64(70_000);
    for _ in 0..100_000 {
        let v = |rng: &mut ChaCha8Rng| {
            [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]
        };
        let (p, a, b) = (v(&mut rng), v(&mut rng), v(&mut rng));
        let delta = rng.gen_range(0.0..1.5);
        let got = success(&Vector3::from(p), &Vector3::from(a), &Vector3::from(b), delta);
        assert_eq!(got, oracle(p, a, b, delta));
    }

    // Exact-equality boundaries with exactly representable radii.
    let zero = Vector3::zeros();
    // c1 = c2, delta = 0.5: radius is exactly 3.0.
    assert!(!success(&Vector3::new(3.0, 0.0, 0.0), &zero, &zero, 0.5), "strictness at equality");
    assert!(success(&Vector3::new(2.9999999, 0.0, 0.0), &zero, &zero, 0.5));
    assert!(!oracle([3.0, 0.0, 0.0], [0.0; 3], [0.0; 3], 0.5));
    // |c1 - c2| = 1, delta = 0.25: radius is exactly 7.5.
    let c1 = Vector3::new(0.5, 0.0, 0.0);
    let c2 = Vector3::new(-0.5, 0.0, 0.0);
    assert!(!success(&Vector3::new(7.5, 0.0, 0.0), &c1, &c2, 0.25));
    assert!(success(&Vector3::new(7.4999999, 0.0, 0.0), &c1, &c2, 0.25));
    println!("[PASS] criterion 7: success() matches the oracle on 100000 cases incl. boundaries");
}

fn coverage_fixture(
    total: usize,
    with_pose: usize,
    successes: usize,
) -> (Vec<vq3d_core::predict::VisualQueryRecord>, Vec<Prediction>) {
    use vq3d_core::predict::{AnnotationPair, TrackFrame, VisualQueryRecord};
    assert!(successes <= with_pose && with_pose <= total);
    let mut queries = Vec::new();
    let mut preds = Vec::new();
    for i in 0..total {
        let id = format!("q{i}");
        let c = Vector3::new(i as f64 * 3.0, 0.0, 0.0);
        queries.push(VisualQueryRecord {
            query_id: id.clone(),
            video_id: "v".into(),
            scan_id: "s".into(),
            query_frame: 10,
            response_track: vec![TrackFrame { frame_id: 4, box2d: [0.0, 0.0, 1.0, 1.0] }],
            annotation: AnnotationPair {
                first: Box3::axis_aligned(c, Vector3::repeat(0.2)),
                second: Box3::axis_aligned(c, Vector3::repeat(0.2)),
            },
        });
        if i < with_pose {
            // delta 0.1 gives a strict radius of 0.6; misses sit at 2.0.
            let offset = if i < successes { 0.0 } else { 2.0 };
            preds.push(Prediction {
                query_id: id,
                pose_available: true,
                world_point: Some(c + Vector3::new(offset, 0.0, 0.0)),
                displacement: Some(Vector3::x()),
                confidence: 1.0,
                predicted_box: Some(Box3::axis_aligned(c, Vector3::repeat(0.25))),
            });
        } else {
            preds.push(Prediction::unavailable(id));
        }
    }
    (queries, preds)
}

/// Criterion 8: Succ% never exceeds Succ*% when QwP < 100, the two share one
/// numerator (Succ% = Succ*% x QwP% / 100 within 1e-9), and evaluate() is
/// permutation invariant.
#[test]
fn criterion_08_metric_identities() {
    let cfg = MetricsConfig::new(0.1, vec![0.25]).unwrap();
    for (total, with_pose, successes) in
        [(10, 6, 3), (7, 7, 7), (5, 2, 0), (12, 5, 5), (9, 0, 0), (8, 8, 0)]
    {
        let (queries, preds) = coverage_fixture(total, with_pose, successes);
        let report = evaluate(&preds, &queries, None, &cfg).unwrap();
        assert_eq!(report.counts.successes, successes);
        assert_eq!(report.counts.with_pose, with_pose);
        if report.qwp_pct < 100.0 {
            assert!(
                report.succ_pct <= report.succ_star_pct + 1e-12,
                "({total},{with_pose},{successes}): {} > {}",
                report.succ_pct,
                report.succ_star_pct
            );
        }
        assert!(
            (report.succ_pct - report.succ_star_pct * report.qwp_pct / 100.0).abs() < 1e-9,
            "starred identity broken for ({total},{with_pose},{successes})"
        );

        let mut rev_q = queries.clone();
        rev_q.reverse();
        let mut rev_p = preds.clone();
        rev_p.reverse();
        assert_eq!(report, evaluate(&rev_p, &rev_q, None, &cfg).unwrap());
    }
    println!("[PASS] criterion 8: metric identities and permutation invariance");
}

/// Criterion 9: average_precision_3d reproduces hand-enumerated PR curves on
/// five small fixtures, including AP = 0 for total miss and AP = 1 for
/// perfect predictions.
#[test]
fn criterion_09_average_precision() {
    let unit = Box3::from_min_max(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0));
    let far = Box3::from_min_max(Vector3::repeat(10.0), Vector3::repeat(11.0));
    let gt = |ids: &[&str]| -> Vec<(Box3, String)> {
        ids.iter().map(|i| (unit, i.to_string())).collect()
    };

    // Fixture 1: only the middle-confidence prediction matches; PR by hand:
    // (0,0) -> (1/2,1/2) -> (1/3,1/2), AP = 0.5 * 0.5 = 0.25.
    let preds = vec![
        (far, 0.9, "a".to_string()),
        (unit, 0.8, "a".to_string()),
        (far, 0.7, "b".to_string()),
    ];
    let (ap, points) = average_precision_3d(&preds, &gt(&["a", "b"]), 0.5);
    assert_eq!(
        points,
        vec![
            vq3d_core::metrics::PrPoint { precision: 0.0, recall: 0.0 },
            vq3d_core::metrics::PrPoint { precision: 0.5, recall: 0.5 },
            vq3d_core::metrics::PrPoint { precision: 1.0 / 3.0, recall: 0.5 },
        ]
    );
    assert!((ap - 0.25).abs() < 1e-12);

    // Fixture 2: perfect predictions at every threshold give AP = 1.
    let preds = vec![(unit, 0.9, "a".to_string()), (unit, 0.4, "b".to_string())];
    for threshold in [0.05, 0.5, 1.0] {
        let (ap, _) = average_precision_3d(&preds, &gt(&["a", "b"]), threshold);
        assert_eq!(ap, 1.0, "threshold {threshold}");
    }

    // Fixture 3: complete lack of overlap gives AP = 0 at every threshold.
    let preds = vec![(far, 0.9, "a".to_string()), (far, 0.8, "b".to_string())];
    for threshold in [0.05, 0.25, 0.5] {
        let (ap, _) = average_precision_3d(&preds, &gt(&["a", "b"]), threshold);
        assert_eq!(ap, 0.0, "threshold {threshold}");
    }

    // Fixture 4: high-confidence miss then a hit on the single ground truth:
    // (0,0) -> (1/2,1), AP = 1 * 1/2 = 0.5.
    let preds = vec![(far, 0.9, "a".to_string()), (unit, 0.1, "a".to_string())];
    let (ap, points) = average_precision_3d(&preds, &gt(&["a"]), 0.5);
    assert_eq!(points.len(), 2);
    assert!((ap - 0.5).abs() < 1e-12);

    // Fixture 5: hit, duplicate on the same query (FP: already matched), hit.
    // PR: (1,1/3) -> (1/2,1/3) -> (2/3,2/3); AP = 1/3 * 1 + 1/3 * 2/3 = 5/9.
    let preds = vec![
        (unit, 0.9, "a".to_string()),
        (unit, 0.8, "a".to_string()),
        (unit, 0.7, "b".to_string()),
    ];
    let (ap, points) = average_precision_3d(&preds, &gt(&["a", "b", "c"]), 0.5);
    assert_eq!(points[0], vq3d_core::metrics::PrPoint { precision: 1.0, recall: 1.0 / 3.0 });
    assert_eq!(points[1], vq3d_core::metrics::PrPoint { precision: 0.5, recall: 1.0 / 3.0 });
    assert_eq!(points[2], vq3d_core::metrics::PrPoint { precision: 2.0 / 3.0, recall: 2.0 / 3.0 });
    assert!((ap - 5.0 / 9.0).abs() < 1e-12);

    println!("[PASS] criterion 9: AP matches 5 hand-enumerated fixtures incl. AP=0 and AP=1");
}

/// Criterion 10: iou_3d is within 0.01 of a 1e6-sample Monte-Carlo volume
/// estimate on 50 seeded random axis-aligned pairs.
#[test]
fn criterion_10_iou_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(100_000);
    for pair in 0..50 {
        let random_box = |rng: &mut ChaCha8Rng| {
            Box3::axis_aligned(
                Vector3::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)),
                Vector3::new(
                    rng.gen_range(0.05..0.6),
                    rng.gen_range(0.05..0.6),
                    rng.gen_range(0.05..0.6),
                ),
            )
        };
        let a = random_box(&mut rng);
        let b = random_box(&mut rng);
        let (amin, amax) = a.aabb();
        let (bmin, bmax) = b.aabb();
        let lo = amin.inf(&bmin);
        let hi = amax.sup(&bmax);
        let mut in_union = 0u64;
        let mut in_inter = 0u64;
        for _ in 0..1_000_000 {
            let p = Vector3::new(
                rng.gen_range(lo.x..hi.x),
                rng.gen_range(lo.y..hi.y),
                rng.gen_range(lo.z..hi.z),
            );
            let ia = amin.x <= p.x && p.x <= amax.x && amin.y <= p.y && p.y <= amax.y && amin.z <= p.z && p.z <= amax.z;
            let ib = bmin.x <= p.x && p.x <= bmax.x && bmin.y <= p.y && p.y <= bmax.y && bmin.z <= p.z && p.z <= bmax.z;
            in_union += (ia || ib) as u64;
            in_inter += (ia && ib) as u64;
        }
        let estimate = in_inter as f64 / in_union.max(1) as f64;
        let exact = iou_3d(&a, &b);
        assert!(
            (exact - estimate).abs() < 0.01,
            "pair {pair}: iou {exact} vs monte carlo {estimate}"
        );
    }
    println!("[PASS] criterion 10: iou within 0.01 of 1e6-sample Monte Carlo, 50 pairs");
}

/// Criterion 11: the noiseless pipeline (synth -> register -> fuse ->
/// predict -> evaluate) with predictions pinned to the ground-truth object
/// points scores Succ 100%, L2 < 1e-6 m, angle < 1e-6 rad, QwP 100%, in
/// under 30 seconds.
#[test]
fn criterion_11_end_to_end_noiseless() {
    let start = Instant::now();
    let cfg = SynthConfig { rng_seed: 110, num_videos: 3, frames_per_video: 30, ..Default::default() };
    let scene = generate(&cfg);
    let align = RobustAlignConfig::default();

    let mut tables = Vec::new();
    for (video_id, recon) in &scene.video_recons {
        let anchors = scene.anchors[video_id].to_pose_table();
        let (t, _) = fit_registration(recon, &anchors, &align).unwrap();
        tables.push(apply_registration(recon, &t, Provenance::VideoProcrustes));
    }
    let all_anchors =
        io::anchors_to_pose_table(&scene.anchors.values().cloned().collect::<Vec<_>>());
    let (scan_t, _) = fit_registration(&scene.scan_recon, &all_anchors, &align).unwrap();
    tables.push(apply_registration(&scene.scan_recon, &scan_t, Provenance::ScanProcrustes));

    let fused = fuse(&tables, &FusionPolicy::default());
    let (filtered, flagged) = filter_outliers(&fused, &scene.scan, 1.0);
    assert_eq!(flagged, 0, "noiseless poses all lie inside the scan");

    // Scan-center mode determines availability; the harness then pins the
    // points to the ground-truth object locations.
    let mut scans = BTreeMap::new();
    scans.insert(scene.scan.scan_id.clone(), scene.scan.clone());
    let baseline =
        predict_queries(&scene.queries, &filtered, &scans, &PredictOptions::default()).unwrap();
    assert!(baseline.iter().all(|p| p.pose_available));
    let pinned = pin_predictions_to_annotation(&scene.queries, &filtered, 0.5);

    let metrics_cfg = MetricsConfig::new(0.25, vec![0.25]).unwrap();
    let report =
        evaluate(&pinned, &scene.queries, Some(&scene.ground_truth), &metrics_cfg).unwrap();
    assert_eq!(report.succ_pct, 100.0, "succ");
    assert!(report.l2 < 1e-6, "l2 {}", report.l2);
    assert!(report.angle < 1e-6, "angle {}", report.angle);
    assert_eq!(report.qwp_pct, 100.0, "qwp");

    // Cross-check against the independent oracle report.
    let expected = expected_report(&scene, &metrics_cfg, OraclePrediction::Perfect, true);
    assert_eq!(expected.counts, report.counts);
    assert!((expected.succ_pct - report.succ_pct).abs() < 1e-9);
    assert!((expected.l2 - report.l2).abs() < 1e-9);

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}, budget 30 s");
    println!("[PASS] criterion 11: end-to-end noiseless pipeline exact in {elapsed:?}");
}

/// Criterion 12: apply_3d_constraints matches an independently coded
/// brute-force nearest-vertex search on 10_000 random outside points and is
/// idempotent.
#[test]
fn criterion_12_constraints() {
    let scene = generate(&SynthConfig { rng_seed: 120, ..Default::default() });
    let scan: &ScanGeometry = &scene.scan;
    let (min, max) = scan.bounds.aabb();

    let mut rng = ChaCha8Rng::seed_from_u64(120_001);
    let mut points = Vec::new();
    while points.len() < 10_000 {
        let p = Vector3::new(
            rng.gen_range(min.x - 10.0..max.x + 10.0),
            rng.gen_range(min.y - 10.0..max.y + 10.0),
            rng.gen_range(min.z - 10.0..max.z + 10.0),
        );
        if !scan.bounds.contains(&p) {
            points.push(p);
        }
    }

    let snapped = apply_3d_constraints(&points, scan);
    for (p, s) in points.iter().zip(&snapped) {
        // Independent search path: reversed iteration with <= lands on the
        // same lowest-index tie-break.
        let mut best = *scan.vertices.last().unwrap();
        let mut best_d = f64::INFINITY;
        for v in scan.vertices.iter().rev() {
            let dx = v.x - p.x;
            let dy = v.y - p.y;
            let dz = v.z - p.z;
            let d = dx * dx + dy * dy + dz * dz;
            if d <= best_d {
                best_d = d;
                best = *v;
            }
        }
        assert_eq!(*s, best);
    }

    let twice = apply_3d_constraints(&snapped, scan);
    assert_eq!(snapped, twice, "apply twice must equal apply once");
    println!("[PASS] criterion 12: constraints match brute force on 10000 points, idempotent");
}

/// Criterion 13: sparse-model, scan, and JSON schema fixtures survive
/// parse -> serialize -> parse bit-identically after one normalization
/// cycle, and 1000 mutated files produce typed errors, never panics.
#[test]
fn criterion_13_round_trips_and_fuzz() {
    use vq3d_core::io::{
        parse_sparse_model, read_anchors, read_pose_table, read_predictions, read_queries,
        serialize_sparse_model, write_anchors, write_pose_table, write_predictions, write_queries,
        FrameNamePattern, ModelBundle, Strictness,
    };
    use vq3d_core::registration::ReconstructionSource;

    let dir = tempfile::tempdir().unwrap();
    let scene = generate(&SynthConfig { rng_seed: 130, num_videos: 2, frames_per_video: 15, ..Default::default() });

    // Sparse model: the first serialization normalizes, after which both the
    // bytes and the parsed values are fixed points.
    let model_dir = dir.path().join("model");
    let bundle = ModelBundle {
        reconstruction: scene.video_recons["v0"].clone(),
        intrinsics: BTreeMap::from([(1u32, scene.intrinsics.clone())]),
    };
    serialize_sparse_model(&model_dir, &bundle).unwrap();
    let source = ReconstructionSource::Video { video_id: "v0".into() };
    let parsed1 =
        parse_sparse_model(&model_dir, source.clone(), &FrameNamePattern::default()).unwrap();
    let read_files = |d: &std::path::Path| {
        ["cameras.txt", "images.txt", "points3D.txt"]
            .map(|f| std::fs::read_to_string(d.join(f)).unwrap())
    };
    let bytes1 = read_files(&model_dir);
    serialize_sparse_model(&model_dir, &parsed1).unwrap();
    let bytes2 = read_files(&model_dir);
    assert_eq!(bytes1, bytes2, "model serialization is not a fixed point");
    let parsed2 =
        parse_sparse_model(&model_dir, source, &FrameNamePattern::default()).unwrap();
    assert_eq!(parsed1.reconstruction, parsed2.reconstruction);
    assert_eq!(parsed1.intrinsics, parsed2.intrinsics);
    // Values also stay within text precision of the original bundle.
    for (key, frame) in &bundle.reconstruction.frames {
        let reparsed = &parsed1.reconstruction.frames[key];
        assert!(
            (reparsed.pose.camera_center() - frame.pose.camera_center()).norm() < 1e-9
        );
    }

    // Scan files: ASCII and binary encodings round trip byte-identically and
    // agree with each other.
    let ply_ascii = dir.path().join("scan_a.ply");
    let ply_binary = dir.path().join("scan_b.ply");
    io::write_scan_ply_ascii(&ply_ascii, &scene.scan).unwrap();
    io::write_scan_ply_binary(&ply_binary, &scene.scan).unwrap();
    let a = io::load_scan(&ply_ascii).unwrap();
    let b = io::load_scan(&ply_binary).unwrap();
    assert_eq!(a.vertices, b.vertices);
    io::write_scan_ply_ascii(&ply_ascii, &a).unwrap();
    let again = io::load_scan(&ply_ascii).unwrap();
    assert_eq!(a.vertices, again.vertices);

    // JSON schemas: write -> read -> write is byte-identical.
    let queries_path = dir.path().join("queries.json");
    write_queries(&queries_path, &scene.queries).unwrap();
    let q_bytes = std::fs::read(&queries_path).unwrap();
    let queries = read_queries(&queries_path, Strictness::Strict).unwrap();
    write_queries(&queries_path, &queries).unwrap();
    assert_eq!(q_bytes, std::fs::read(&queries_path).unwrap());

    let table_path = dir.path().join("table.json");
    write_pose_table(&table_path, &scene.ground_truth).unwrap();
    let t_bytes = std::fs::read(&table_path).unwrap();
    let table = read_pose_table(&table_path, Strictness::Strict).unwrap();
    assert_eq!(table, scene.ground_truth);
    write_pose_table(&table_path, &table).unwrap();
    assert_eq!(t_bytes, std::fs::read(&table_path).unwrap());

    let anchors_path = dir.path().join("anchors.json");
    write_anchors(&anchors_path, &scene.anchors["v0"]).unwrap();
    let a_bytes = std::fs::read(&anchors_path).unwrap();
    let anchors = read_anchors(&anchors_path, Strictness::Strict).unwrap();
    assert_eq!(anchors, scene.anchors["v0"]);
    write_anchors(&anchors_path, &anchors).unwrap();
    assert_eq!(a_bytes, std::fs::read(&anchors_path).unwrap());

    let preds_path = dir.path().join("predictions.json");
    let preds = pin_predictions_to_annotation(&scene.queries, &scene.ground_truth, 0.5);
    write_predictions(&preds_path, &preds).unwrap();
    let p_bytes = std::fs::read(&preds_path).unwrap();
    let preds_back = read_predictions(&preds_path, Strictness::Strict).unwrap();
    assert_eq!(preds, preds_back);
    write_predictions(&preds_path, &preds_back).unwrap();
    assert_eq!(p_bytes, std::fs::read(&preds_path).unwrap());

    // Fuzz: 1000 seeded mutations across every parser must yield typed
    // errors, never panics (a panic fails this test).
    let mut rng = ChaCha8Rng::seed_from_u64(130_999);
    let fuzz_dir = dir.path().join("fuzz");
    std::fs::create_dir_all(&fuzz_dir).unwrap();
    let model_files = ["cameras.txt", "images.txt", "points3D.txt"];
    let json_fixtures = [
        std::fs::read(&queries_path).unwrap(),
        std::fs::read(&table_path).unwrap(),
        std::fs::read(&anchors_path).unwrap(),
        std::fs::read(&preds_path).unwrap(),
    ];
    let scan_fixtures = [
        std::fs::read(&ply_ascii).unwrap(),
        std::fs::read(&ply_binary).unwrap(),
    ];
    let mut parsed_ok = 0usize;
    let mut parsed_err = 0usize;
    for case in 0..1000 {
        let mutate = |rng: &mut ChaCha8Rng, bytes: &[u8]| -> Vec<u8> {
            let mut out = bytes.to_vec();
            match rng.gen_range(0..5) {
                0 if !out.is_empty() => {
                    out.truncate(rng.gen_range(0..out.len()));
                }
                1 if !out.is_empty() => {
                    let i = rng.gen_range(0..out.len());
                    out[i] = rng.gen();
                }
                2 => {
                    let i = rng.gen_range(0..=out.len());
                    let garbage: Vec<u8> = (0..rng.gen_range(1..16)).map(|_| rng.gen()).collect();
                    out.splice(i..i, garbage);
                }
                3 if !out.is_empty() => {
                    // Delete a random line.
                    let lines: Vec<&[u8]> = out.split(|b| *b == b'\n').collect();
                    let drop = rng.gen_range(0..lines.len());
                    let kept: Vec<u8> = lines
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != drop)
                        .flat_map(|(_, l)| l.iter().copied().chain(std::iter::once(b'\n')))
                        .collect();
                    out = kept;
                }
                _ => {
                    // Swap two random bytes.
                    if out.len() >= 2 {
                        let i = rng.gen_range(0..out.len());
                        let j = rng.gen_range(0..out.len());
                        out.swap(i, j);
                    }
                }
            }
            out
        };

        let outcome: Result<(), ()> = match case % 4 {
            0 => {
                // Mutate one model file, parse the directory.
                let target_dir = fuzz_dir.join("model");
                let _ = std::fs::remove_dir_all(&target_dir);
                std::fs::create_dir_all(&target_dir).unwrap();
                for f in model_files {
                    std::fs::copy(model_dir.join(f), target_dir.join(f)).unwrap();
                }
                let victim = model_files[rng.gen_range(0..3)];
                let original = std::fs::read(model_dir.join(victim)).unwrap();
                std::fs::write(target_dir.join(victim), mutate(&mut rng, &original)).unwrap();
                parse_sparse_model(
                    &target_dir,
                    ReconstructionSource::Video { video_id: "v0".into() },
                    &FrameNamePattern::default(),
                )
                .map(|_| ())
                .map_err(|_| ())
            }
            1 => {
                let bytes = mutate(&mut rng, &scan_fixtures[case % 2]);
                let path = fuzz_dir.join("scan.ply");
                std::fs::write(&path, bytes).unwrap();
                io::load_scan(&path).map(|_| ()).map_err(|_| ())
            }
            2 => {
                let fixture = &json_fixtures[rng.gen_range(0..json_fixtures.len())];
                let bytes = mutate(&mut rng, fixture);
                let path = fuzz_dir.join("doc.json");
                std::fs::write(&path, bytes).unwrap();
                match rng.gen_range(0..4) {
                    0 => read_queries(&path, Strictness::Strict).map(|_| ()).map_err(|_| ()),
                    1 => read_pose_table(&path, Strictness::Strict).map(|_| ()).map_err(|_| ()),
                    2 => read_anchors(&path, Strictness::Strict).map(|_| ()).map_err(|_| ()),
                    _ => read_predictions(&path, Strictness::Strict).map(|_| ()).map_err(|_| ()),
                }
            }
            _ => {
                let bytes = mutate(&mut rng, &scan_fixtures[0]);
                let path = fuzz_dir.join("scan.xyz");
                std::fs::write(&path, bytes).unwrap();
                io::load_scan(&path).map(|_| ()).map_err(|_| ())
            }
        };
        match outcome {
            Ok(()) => parsed_ok += 1,
            Err(()) => parsed_err += 1,
        }
    }
    assert_eq!(parsed_ok + parsed_err, 1000);
    assert!(parsed_err > 500, "mutations should mostly break parses ({parsed_err} errors)");
    println!(
        "[PASS] criterion 13: round trips bit-identical; fuzz 1000 files -> {parsed_err} typed errors, {parsed_ok} still valid, 0 panics"
    );
}
