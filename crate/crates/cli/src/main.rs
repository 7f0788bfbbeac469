use std::path::PathBuf;
use std::process::ExitCode;

use aerotree_cli::commands::{self, SynthRequest};
use aerotree_cli::{CliError, PipelineConfig, Result};
use aerotree_core::metrics::{MetricsReport, StdKind};
use aerotree_core::SynthTreeSpec;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "aerotree", version, about = "Airway tree segmentation toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct GlobalArgs {
    /// JSON configuration file; flags given on the command line override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "AEROTREE_THREADS")]
    threads: Option<usize>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    ct: Option<PathBuf>,
    #[arg(long, global = true)]
    lung: Option<PathBuf>,
    /// Probability map to fuse; repeat for an ensemble.
    #[arg(long = "prob", global = true)]
    probability_maps: Vec<PathBuf>,
    #[arg(long = "pred", alias = "mask", global = true)]
    pred: Option<PathBuf>,
    #[arg(long, global = true)]
    gt: Option<PathBuf>,
    /// CSV with columns case_id, pred_path, gt_path, lung_path.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    case_id: Option<String>,
    #[arg(long, global = true)]
    parallel_cases: Option<usize>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    search_radius_mm: Option<f64>,
    #[arg(long, global = true)]
    max_angle_deg: Option<f64>,
    #[arg(long, global = true)]
    branch_detect_fraction: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Resample, window and crop a CT with its lung mask.
    Preprocess,
    /// Fuse probability maps by voxel-wise maximum and threshold.
    Fuse,
    /// Reconnect broken branches and drop disconnected islands.
    Postprocess,
    /// Score predictions against ground truth.
    Evaluate,
    /// Generate a synthetic airway tree.
    Synth(Box<SynthArgs>),
    /// Preprocess (with --ct), fuse, postprocess and evaluate (with --gt and --lung).
    Pipeline,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// JSON tree specification; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    depth: Option<u32>,
    #[arg(long)]
    root_length_mm: Option<f64>,
    #[arg(long)]
    root_radius_mm: Option<f64>,
    #[arg(long)]
    length_decay: Option<f64>,
    #[arg(long)]
    radius_decay: Option<f64>,
    #[arg(long)]
    branch_angle_deg: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    /// Grid size as x,y,z.
    #[arg(long, value_parser = parse_list::<usize, 3>)]
    dims: Option<[usize; 3]>,
    /// Voxel spacing in mm as x,y,z.
    #[arg(long, value_parser = parse_list::<f64, 3>)]
    spacing: Option<[f64; 3]>,
    /// Branch id to cut.
    #[arg(long)]
    cut: Option<usize>,
    #[arg(long, default_value_t = 5.0)]
    gap_mm: f64,
    /// Noise ball as x,y,z,radius in mm; repeatable.
    #[arg(long = "blob", value_parser = parse_list::<f64, 4>)]
    blobs: Vec<[f64; 4]>,
}

/// Parses exactly `N` comma-separated values.
fn parse_list<T: std::str::FromStr + Copy + Default, const N: usize>(s: &str) -> std::result::Result<[T; N], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(format!("expected {N} comma-separated values, got {}", parts.len()));
    }
    let mut out = [T::default(); N];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = p.parse().map_err(|_| format!("invalid number {p:?}"))?;
    }
    Ok(out)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn build_config(g: GlobalArgs) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let p = &mut cfg.paths;
    for (slot, v) in [
        (&mut p.ct, g.ct),
        (&mut p.lung_mask, g.lung),
        (&mut p.pred_mask, g.pred),
        (&mut p.gt_mask, g.gt),
        (&mut p.manifest, g.manifest),
        (&mut p.output_dir, g.output_dir),
    ] {
        if v.is_some() {
            *slot = v;
        }
    }
    if !g.probability_maps.is_empty() {
        p.probability_maps = g.probability_maps;
    }
    set(&mut cfg.case_id, g.case_id);
    set(&mut cfg.parallel_cases, g.parallel_cases);
    set(&mut cfg.fusion.threshold, g.threshold);
    set(&mut cfg.reconnect.search_radius_mm, g.search_radius_mm);
    set(&mut cfg.reconnect.max_angle_deg, g.max_angle_deg);
    set(&mut cfg.metrics.branch_detect_fraction, g.branch_detect_fraction);
    cfg.validate()?;
    Ok(cfg)
}

fn synth_request(a: SynthArgs) -> Result<SynthRequest> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read spec {}: {e}", p.display())))?;
            serde_json::from_str::<SynthTreeSpec>(&text)
                .map_err(|e| CliError::Config(format!("cannot parse spec {}: {e}", p.display())))?
        }
        None => SynthTreeSpec::default(),
    };
    set(&mut spec.seed, a.seed);
    set(&mut spec.depth, a.depth);
    set(&mut spec.root_length_mm, a.root_length_mm);
    set(&mut spec.root_radius_mm, a.root_radius_mm);
    set(&mut spec.length_decay, a.length_decay);
    set(&mut spec.radius_decay, a.radius_decay);
    set(&mut spec.branch_angle_deg, a.branch_angle_deg);
    set(&mut spec.jitter, a.jitter);
    set(&mut spec.dims, a.dims);
    set(&mut spec.spacing, a.spacing);
    Ok(SynthRequest {
        spec,
        cut: a.cut.map(|b| (b, a.gap_mm)),
        blobs: a.blobs,
    })
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = build_config(cli.global)?;
    match cli.command {
        Command::Preprocess => {
            let out = commands::preprocess(&cfg)?;
            println!("{}", out.ct.display());
        }
        Command::Fuse => {
            let out = commands::fuse(&cfg)?;
            println!("{} ({} foreground voxels)", out.mask.display(), out.foreground);
        }
        Command::Postprocess => {
            let out = commands::postprocess(&cfg)?;
            println!(
                "{}: {} reconnected, {} islands discarded",
                out.mask.display(),
                out.report.reconnected.len(),
                out.report.discarded.len()
            );
        }
        Command::Evaluate => {
            let out = commands::evaluate(&cfg)?;
            print!("{}", out.report.table());
        }
        Command::Synth(args) => {
            let out = commands::synth(&cfg, &synth_request(*args)?)?;
            println!("{}", out.mask.display());
        }
        Command::Pipeline => {
            let summary = commands::pipeline(&cfg)?;
            let rows: Vec<_> = [("thresholded", &summary.thresholded), ("refined", &summary.refined)]
                .into_iter()
                .filter_map(|(tag, r)| {
                    r.clone().map(|mut r| {
                        r.case_id = format!("{} ({tag})", r.case_id);
                        r
                    })
                })
                .collect();
            if rows.is_empty() {
                println!(
                    "{} reconnected, {} islands discarded",
                    summary.refine_report.reconnected.len(),
                    summary.refine_report.discarded.len()
                );
            } else {
                print!("{}", MetricsReport::new(rows, Vec::new(), StdKind::Sample).table());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { aerotree_cli::error::EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
