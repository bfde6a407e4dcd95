//! Command-line front end sequencing the registration and evaluation
//! pipeline: `synth`, `register`, `fuse`, `constrain`, `predict`, `evaluate`.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O
//! error.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vq3d_core::io::{self, FrameNamePattern, IoError, Strictness, ToolkitConfig};
use vq3d_core::metrics::{self, MetricsConfig};
use vq3d_core::predict::{predict_queries, PredictError};
use vq3d_core::procrustes::ProcrustesError;
use vq3d_core::registration::{
    apply_3d_constraints, apply_registration, filter_outliers, fit_registration, fuse, pose_recall,
    PoseTable, Provenance, ReconstructionSource, RegistrationError, ScanGeometry,
};
use vq3d_core::synth;

#[derive(Parser)]
#[command(name = "vq3d", version, about = "Camera-pose registration into 3D scans and visual-query 3D localization metrics")]
struct Cli {
    /// JSON config mirroring every tool config type.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every rng seed in the effective config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Reject unknown fields in JSON inputs instead of warning.
    #[arg(long, global = true)]
    strict: bool,
    /// Custom image-name regex with 'video' and 'frame' capture groups.
    #[arg(long, global = true)]
    frame_pattern: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic scene in the production formats.
    Synth(SynthArgs),
    /// Fit a similarity transform from PnP anchors and map a sparse model
    /// into scan coordinates.
    Register(RegisterArgs),
    /// Merge pose tables by provenance priority.
    Fuse(FuseArgs),
    /// Flag out-of-bounds poses and optionally snap centers to the scan.
    Constrain(ConstrainArgs),
    /// Produce 3D predictions for visual queries from a pose table.
    Predict(PredictArgs),
    /// Evaluate predictions against queries with the challenge metrics and
    /// 3D-IoU average precision.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the scene.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegisterArgs {
    /// Sparse model directory (cameras.txt, images.txt, points3D.txt).
    #[arg(long)]
    model: PathBuf,
    /// Anchor files (one per video; several for scan-merge models).
    #[arg(long, required = true, num_args = 1..)]
    anchors: Vec<PathBuf>,
    /// Treat the model as a per-video reconstruction for this video id.
    #[arg(long, conflicts_with_all = ["scan_id", "device"])]
    video: Option<String>,
    /// Treat the model as a scan-merge reconstruction for this scan id.
    #[arg(long, requires = "device")]
    scan_id: Option<String>,
    /// Capture device of the scan-merge reconstruction.
    #[arg(long)]
    device: Option<String>,
    /// Mean inlier residual above which the fit is discarded (meters).
    #[arg(long)]
    residual_gate: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    /// Pose tables in priority order.
    #[arg(long = "table", required = true, num_args = 1..)]
    tables: Vec<PathBuf>,
    /// Comma-separated provenance priority, e.g.
    /// video-procrustes,scan-procrustes,pnp.
    #[arg(long, value_delimiter = ',')]
    order: Vec<Provenance>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConstrainArgs {
    #[arg(long)]
    table: PathBuf,
    /// Scan file (.ply or .xyz).
    #[arg(long)]
    scan: PathBuf,
    /// Outlier margin around the scan bounds, meters.
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    /// Skip outlier flagging.
    #[arg(long)]
    no_filter: bool,
    /// Move camera centers outside the scan bounds to the nearest vertex.
    #[arg(long)]
    snap_centers: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    table: PathBuf,
    /// Scan files; each is keyed by its file stem as scan id.
    #[arg(long = "scan", required = true, num_args = 1..)]
    scans: Vec<PathBuf>,
    /// Emit raw scan centers without snapping into the scan bounds.
    #[arg(long)]
    no_constraints: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    /// Ground-truth pose table for angular errors.
    #[arg(long)]
    gt_poses: Option<PathBuf>,
    /// Success-threshold slack in meters (required here or in the config
    /// file; there is no default).
    #[arg(long)]
    delta: Option<f64>,
    /// Comma-separated IoU thresholds for the AP sweep.
    #[arg(long, value_delimiter = ',')]
    iou_thresholds: Vec<f64>,
    /// Report JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the flat text table here (always printed to stdout).
    #[arg(long)]
    table_out: Option<PathBuf>,
    /// Also print the per-query success-radius distribution.
    #[arg(long)]
    slack: bool,
}

enum CliError {
    Validation(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) | CliError::Io(m) => m,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Io(e.to_string())
        }
    }
}

impl From<RegistrationError> for CliError {
    fn from(e: RegistrationError) -> Self {
        match &e {
            RegistrationError::InsufficientAnchors { .. } | RegistrationError::Procrustes(_) => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ProcrustesError> for CliError {
    fn from(e: ProcrustesError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<PredictError> for CliError {
    fn from(e: PredictError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<metrics::MetricsError> for CliError {
    fn from(e: metrics::MetricsError) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => io::read_toolkit_config(path)?,
        None => ToolkitConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.robust_align.rng_seed = seed;
        config.pnp.rng_seed = seed;
        config.synth.rng_seed = seed;
    }
    let strictness = if cli.strict { Strictness::Strict } else { Strictness::Lenient };
    let pattern = match &cli.frame_pattern {
        Some(p) => FrameNamePattern::from_regex(p)?,
        None => FrameNamePattern::default(),
    };

    match cli.command {
        Command::Synth(args) => run_synth(&config, &args),
        Command::Register(args) => run_register(&config, strictness, &pattern, &args),
        Command::Fuse(args) => run_fuse(&config, strictness, &args),
        Command::Constrain(args) => run_constrain(strictness, &args),
        Command::Predict(args) => run_predict(&config, strictness, &args),
        Command::Evaluate(args) => run_evaluate(&config, strictness, &args),
    }
}

fn run_synth(config: &ToolkitConfig, args: &SynthArgs) -> Result<(), CliError> {
    let scene = synth::generate(&config.synth);
    synth::write_scene(&scene, &args.out)?;
    println!(
        "wrote scene '{}': {} videos x {} frames, {} queries -> {}",
        config.synth.scan_id,
        config.synth.num_videos,
        config.synth.frames_per_video,
        scene.queries.len(),
        args.out.display()
    );
    Ok(())
}

fn run_register(
    config: &ToolkitConfig,
    strictness: Strictness,
    pattern: &FrameNamePattern,
    args: &RegisterArgs,
) -> Result<(), CliError> {
    let source = match (&args.video, &args.scan_id) {
        (Some(video_id), None) => ReconstructionSource::Video { video_id: video_id.clone() },
        (None, Some(scan_id)) => ReconstructionSource::ScanMerge {
            scan_id: scan_id.clone(),
            device_id: args.device.clone().unwrap_or_default(),
        },
        _ => {
            return Err(CliError::Validation(
                "exactly one of --video or --scan-id/--device is required".into(),
            ));
        }
    };
    let provenance = match &source {
        ReconstructionSource::Video { .. } => Provenance::VideoProcrustes,
        ReconstructionSource::ScanMerge { .. } => Provenance::ScanProcrustes,
    };

    let bundle = io::parse_sparse_model(&args.model, source, pattern)?;
    let mut anchor_files = Vec::new();
    for path in &args.anchors {
        anchor_files.push(io::read_anchors(path, strictness)?);
    }
    let anchors = io::anchors_to_pose_table(&anchor_files);

    let (transform, diagnostics) =
        fit_registration(&bundle.reconstruction, &anchors, &config.robust_align)?;
    let gate = args.residual_gate.unwrap_or(config.fusion.residual_gate);
    let table = if diagnostics.mean_residual > gate {
        eprintln!(
            "warning: mean anchor residual {:.4} m exceeds the gate {:.4} m; emitting an empty table",
            diagnostics.mean_residual, gate
        );
        PoseTable::new()
    } else {
        apply_registration(&bundle.reconstruction, &transform, provenance)
    };
    io::write_pose_table(&args.out, &table)?;
    println!(
        "registered {} frames from {} anchors ({} inliers, mean residual {:.3e} m, scale {:.6})",
        table.len(),
        diagnostics.anchor_count,
        diagnostics.inlier_count,
        diagnostics.mean_residual,
        transform.scale
    );
    Ok(())
}

fn run_fuse(config: &ToolkitConfig, strictness: Strictness, args: &FuseArgs) -> Result<(), CliError> {
    let mut tables = Vec::new();
    for path in &args.tables {
        tables.push(io::read_pose_table(path, strictness)?);
    }
    let mut policy = config.fusion.clone();
    if !args.order.is_empty() {
        policy.order = args.order.clone();
    }
    policy.validate()?;
    let fused = fuse(&tables, &policy);

    let mut totals: BTreeMap<String, u64> = BTreeMap::new();
    for (key, _) in fused.iter() {
        *totals.entry(key.video_id.clone()).or_default() += 1;
    }
    io::write_pose_table(&args.out, &fused)?;
    // Recall over the fused key space; full per-video totals live with the
    // dataset, not the tables.
    if let Ok(recall) = pose_recall(&fused, &totals) {
        println!(
            "fused {} tables into {} entries ({} valid, {:.2}% of fused keys usable)",
            tables.len(),
            fused.len(),
            fused.valid_count(),
            recall.frame_rate_pct
        );
    }
    Ok(())
}

fn run_constrain(strictness: Strictness, args: &ConstrainArgs) -> Result<(), CliError> {
    let table = io::read_pose_table(&args.table, strictness)?;
    let scan = io::load_scan(&args.scan)?;

    let (mut table, flagged) = if args.no_filter {
        (table, 0)
    } else {
        filter_outliers(&table, &scan, args.margin)
    };
    let mut snapped = 0usize;
    if args.snap_centers {
        table = snap_table_centers(&table, &scan, &mut snapped);
    }
    io::write_pose_table(&args.out, &table)?;
    println!("flagged {flagged} outliers, snapped {snapped} centers");
    Ok(())
}

fn snap_table_centers(table: &PoseTable, scan: &ScanGeometry, snapped: &mut usize) -> PoseTable {
    table
        .iter()
        .map(|(key, entry)| {
            let mut entry = entry.clone();
            if entry.valid {
                let center = entry.pose.camera_center();
                let constrained = apply_3d_constraints(&[center], scan)[0];
                if constrained != center {
                    entry.pose.translation = constrained;
                    *snapped += 1;
                }
            }
            (key.clone(), entry)
        })
        .collect()
}

fn run_predict(config: &ToolkitConfig, strictness: Strictness, args: &PredictArgs) -> Result<(), CliError> {
    let queries = io::read_queries(&args.queries, strictness)?;
    let table = io::read_pose_table(&args.table, strictness)?;
    let mut scans = BTreeMap::new();
    for path in &args.scans {
        let scan = io::load_scan(path)?;
        scans.insert(scan.scan_id.clone(), scan);
    }
    let mut options = config.predict.clone();
    if args.no_constraints {
        options.constraints = false;
    }
    let predictions = predict_queries(&queries, &table, &scans, &options)?;
    io::write_predictions(&args.out, &predictions)?;
    let covered = predictions.iter().filter(|p| p.pose_available).count();
    println!("predicted {} queries ({covered} with pose)", predictions.len());
    Ok(())
}

fn run_evaluate(config: &ToolkitConfig, strictness: Strictness, args: &EvaluateArgs) -> Result<(), CliError> {
    let predictions = io::read_predictions(&args.predictions, strictness)?;
    let queries = io::read_queries(&args.queries, strictness)?;
    let gt_poses = match &args.gt_poses {
        Some(path) => Some(io::read_pose_table(path, strictness)?),
        None => None,
    };
    let delta = args
        .delta
        .or(config.metrics.delta)
        .ok_or_else(|| CliError::Validation("--delta is required (no default is defined)".into()))?;
    let thresholds = if args.iou_thresholds.is_empty() {
        config.metrics.iou_thresholds.clone()
    } else {
        args.iou_thresholds.clone()
    };
    let mut cfg = MetricsConfig::new(delta, thresholds)?;
    cfg.ap_ground_truth = config.metrics.ap_ground_truth;

    let report = metrics::evaluate(&predictions, &queries, gt_poses.as_ref(), &cfg)?;
    io::write_report(&args.out, &report)?;
    let table = io::render_report_table(&report);
    print!("{table}");
    if let Some(path) = &args.table_out {
        std::fs::write(path, &table)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    if args.slack {
        let slack = metrics::threshold_slack_report(&queries, &cfg);
        println!(
            "success radius over {} queries: mean {:.3} m, median {:.3} m, min {:.3} m, max {:.3} m",
            slack.per_query.len(),
            slack.mean,
            slack.median,
            slack.min,
            slack.max
        );
    }
    Ok(())
}
