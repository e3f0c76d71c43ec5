//! `rslf`: synthesize rolling-shutter light fields, reconstruct them,
//! evaluate runs and check renderer gradients.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rslf_core::eval::{evaluate_maps, evaluate_run, Report, ReportEntry};
use rslf_core::gradcheck::{run_gradcheck, GradcheckOptions};
use rslf_core::io::{self, names};
use rslf_core::lightfield::{Image, LFIntrinsics, RSTiming};
use rslf_core::pipeline::{run_full, Ablation, OptimConfig, RunManifest};
use rslf_core::synth::{motion_suite, preset, render_rslf, MotionCategory, SceneSpec, PRESETS};
use rslf_core::{Error, ErrorKind};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "rslf", version, about = "Dense reconstruction of rolling-shutter light fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with ground truth.
    Synth(SynthArgs),
    /// Reconstruct a dataset: seed, refine, estimate motion, compensate.
    Reconstruct(ReconstructArgs),
    /// Score run directories and write report.json / report.md.
    Evaluate(EvaluateArgs),
    /// Compare analytic renderer gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Built-in scene: plane, checker, sphere or mixed.
    #[arg(long, conflicts_with = "scene")]
    preset: Option<String>,
    /// Scene description written by an earlier run (scene.json).
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Entry of the motion suite (0 is static, 1-5 slow, 6-10 fast).
    #[arg(long, default_value_t = 0)]
    motion_index: usize,
    /// Write one dataset per suite motion under `out`.
    #[arg(long, conflicts_with = "motion_index")]
    all_motions: bool,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 9)]
    angular: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    dataset: PathBuf,
    /// Run directory; defaults to runs/<timestamp>-<config hash>.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "full")]
    ablation: String,
    /// Built-in optimizer settings used when no --config is given.
    #[arg(long, value_parser = ["default", "desk-motion"], default_value = "default")]
    settings: String,
    /// TOML file of optimizer settings, or a run.json to replay.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Iterations of each stage.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    gaussians: Option<usize>,
    /// Rows per band.
    #[arg(long)]
    band: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// One worker thread and no wall-clock fields.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run directories to score.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Dataset of every run; otherwise each run's recorded dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Directory receiving report.json and report.md.
    #[arg(long)]
    out: PathBuf,
    /// Add a ground-truth-against-itself row per dataset.
    #[arg(long)]
    gt_sanity: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random configurations.
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    max_gaussians: usize,
    /// Perturb the analytic gradients (negative control).
    #[arg(long, hide = true)]
    corrupt: bool,
}

/// Provenance of a synthetic dataset, written next to it.
#[derive(Serialize, serde::Deserialize)]
struct SynthRecord {
    preset: Option<String>,
    motion_index: Option<usize>,
    motion_label: Option<String>,
    category: MotionCategory,
    size: usize,
    angular: usize,
    seed: u64,
}

const SYNTH_RECORD: &str = "synth.json";

fn core(e: Error) -> anyhow::Error {
    anyhow::Error::new(e)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::kind) {
        Some(ErrorKind::Argument) => 2,
        Some(ErrorKind::Data) => 3,
        Some(ErrorKind::Numerical) => 4,
        None if err.downcast_ref::<std::io::Error>().is_some() => 3,
        None => 2,
    }
}

fn configure_threads(deterministic: bool) -> anyhow::Result<()> {
    let cap = std::env::var("RSLF_THREADS")
        .ok()
        .map(|v| v.parse::<usize>().map_err(|_| anyhow!("RSLF_THREADS must be a positive integer, got {v:?}")))
        .transpose()?;
    let threads = if deterministic { Some(1) } else { cap.filter(|&n| n > 0) };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow!("cannot configure worker threads: {e}"))?;
    }
    Ok(())
}

fn synth_one(spec: &SceneSpec, record: &SynthRecord, out: &Path) -> anyhow::Result<()> {
    let art = render_rslf(spec).map_err(core)?;
    io::write_dataset(&art, spec, out).map_err(core)?;
    io::write_json(&out.join(SYNTH_RECORD), record).map_err(core)?;
    println!(
        "{}: {}x{}x{}x{}, visible {:.1}% of the ground-truth canvas",
        out.display(),
        spec.angular,
        spec.angular,
        spec.width,
        spec.height,
        100.0 * art.mask.count() as f64 / art.mask.data().len() as f64
    );
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<()> {
    if let Some(path) = &a.scene {
        let spec: SceneSpec = io::read_json(path).map_err(core)?;
        let category = MotionCategory::from_displacement(rslf_core::synth::max_displacement(
            &spec.motion,
            &spec.intr,
            &spec.timing,
            spec.width,
            spec.height,
        ));
        let record = SynthRecord {
            preset: None,
            motion_index: None,
            motion_label: None,
            category,
            size: spec.width,
            angular: spec.angular,
            seed: a.seed,
        };
        return synth_one(&spec, &record, &a.out);
    }
    let name = a
        .preset
        .clone()
        .ok_or_else(|| core(Error::Argument(format!("give --preset ({}) or --scene", PRESETS.join(", ")))))?;
    if a.size < 8 {
        return Err(core(Error::Argument(format!("size must be at least 8, got {}", a.size))));
    }
    let intr = LFIntrinsics::desk(a.size, a.size);
    let timing = RSTiming::for_height(a.size, intr.v0);
    let suite = motion_suite(&intr, &timing, a.size, a.size);
    let indices: Vec<usize> = if a.all_motions {
        (0..suite.len()).collect()
    } else {
        if a.motion_index >= suite.len() {
            return Err(core(Error::Argument(format!(
                "motion index {} outside 0..{}",
                a.motion_index,
                suite.len()
            ))));
        }
        vec![a.motion_index]
    };
    for k in indices {
        let m = &suite[k];
        let spec = preset(&name, a.size, a.angular, a.seed, m.motion).map_err(core)?;
        let out = if a.all_motions {
            a.out.join(format!("{name}_{:02}_{}", k, m.label))
        } else {
            a.out.clone()
        };
        let record = SynthRecord {
            preset: Some(name.clone()),
            motion_index: Some(k),
            motion_label: Some(m.label.to_string()),
            category: m.category,
            size: a.size,
            angular: a.angular,
            seed: a.seed,
        };
        synth_one(&spec, &record, &out)?;
    }
    Ok(())
}

fn load_config(path: &Path) -> anyhow::Result<OptimConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| core(Error::Io { path: path.into(), source: e }))?;
    let bad = |msg: String| core(Error::Data { path: path.into(), msg });
    if path.extension().is_some_and(|e| e == "json") {
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| bad(format!("not a run manifest: {e}")))?;
        Ok(m.config)
    } else {
        toml::from_str(&text).map_err(|e| bad(format!("invalid config: {e}")))
    }
}

fn config_hash(cfg: &OptimConfig, ablation: Ablation) -> String {
    let text = serde_json::to_string(&(cfg, ablation)).expect("config serializes");
    io::sha256_hex(text.as_bytes())[..12].to_string()
}

fn cmd_reconstruct(a: ReconstructArgs) -> anyhow::Result<()> {
    configure_threads(a.deterministic)?;
    let ablation = Ablation::parse(&a.ablation).map_err(core)?;
    let mut cfg = match &a.config {
        Some(p) => load_config(p)?,
        None if a.settings == "desk-motion" => OptimConfig::desk_motion(),
        None => OptimConfig::default(),
    };
    if let Some(n) = a.iters {
        cfg.iters_stage1 = n;
        cfg.iters_stage2 = n;
    }
    if let Some(n) = a.gaussians {
        cfg.gaussians = Some(n);
    }
    if let Some(b) = a.band {
        cfg.band_height = b;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(core)?;
    let data = io::read_dataset(&a.dataset).map_err(core)?;
    let out = match &a.out {
        Some(p) => p.clone(),
        None => {
            let hash = config_hash(&cfg, ablation);
            let name = if a.deterministic {
                hash
            } else {
                let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
                format!("{secs}-{hash}")
            };
            PathBuf::from("runs").join(name)
        }
    };
    let start = Instant::now();
    let run = run_full(&data.lf, &data.intr, &data.timing, &cfg, ablation).map_err(|e| {
        core(e).context(format!("reconstruction failed; no artifacts written to {}", out.display()))
    })?;
    let mut manifest = run.manifest.clone();
    manifest.dataset_hash = Some(data.hash.clone());
    manifest.dataset = Some(a.dataset.display().to_string());
    if !a.deterministic {
        manifest.wall_clock_s = Some(start.elapsed().as_secs_f64());
    }
    io::write_run(&run, &manifest, &out).map_err(core)?;
    let m = run.motion;
    println!(
        "{}: ablation {}, {} gaussians, omega [{:.5}, {:.5}, {:.5}], v [{:.5}, {:.5}, {:.5}]",
        out.display(),
        ablation.name(),
        manifest.gaussians,
        m.omega.x,
        m.omega.y,
        m.omega.z,
        m.vel.x,
        m.vel.y,
        m.vel.z
    );
    Ok(())
}

fn dataset_labels(dir: &Path) -> (String, String) {
    let record: Option<SynthRecord> = io::read_json(&dir.join(SYNTH_RECORD)).ok();
    let fallback = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match record {
        Some(r) => (
            r.preset.unwrap_or(fallback),
            r.motion_label.unwrap_or_else(|| r.category.name().to_string()),
        ),
        None => (fallback, String::new()),
    }
}

fn cmd_evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    let mut entries = Vec::new();
    let mut datasets: Vec<PathBuf> = Vec::new();
    for run in &a.runs {
        let manifest: RunManifest = io::read_json(&run.join(names::RUN)).map_err(core)?;
        let dataset = match (&a.dataset, &manifest.dataset) {
            (Some(d), _) => d.clone(),
            (None, Some(d)) => PathBuf::from(d),
            (None, None) => bail!(core(Error::Argument(format!(
                "{} records no dataset; pass --dataset",
                run.display()
            )))),
        };
        let (metrics, category) = evaluate_run(run, &dataset).map_err(core)?;
        let (scene, motion) = dataset_labels(&dataset);
        entries.push(ReportEntry {
            method: manifest.ablation.name().to_string(),
            scene,
            motion,
            category,
            metrics,
        });
        if !datasets.contains(&dataset) {
            datasets.push(dataset);
        }
    }
    if a.gt_sanity {
        for d in &datasets {
            let gt = io::read_ground_truth(d).map_err(core)?;
            let alpha = Image::filled(gt.depth.width(), gt.depth.height(), 1.0);
            let metrics = evaluate_maps(&gt.central, &gt.depth, &alpha, &gt.central, &gt.depth, &gt.mask).map_err(core)?;
            let (scene, motion) = dataset_labels(d);
            let category = entries
                .iter()
                .find(|e| e.scene == scene && e.motion == motion)
                .map(|e| e.category)
                .unwrap_or(MotionCategory::Gs);
            entries.push(ReportEntry {
                method: "ground-truth".into(),
                scene,
                motion,
                category,
                metrics,
            });
        }
    }
    let report = Report::new(entries);
    std::fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    report.write(&a.out).map_err(core)?;
    print!("{}", report.to_markdown());
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> anyhow::Result<()> {
    if a.n == 0 {
        eprintln!("warning: --n 0 checks nothing");
        println!("gradcheck: PASS (0 configurations)");
        return Ok(());
    }
    let opts = GradcheckOptions {
        configs: a.n,
        max_gaussians: a.max_gaussians,
        seed: a.seed,
        corrupt: a.corrupt,
    };
    let report = run_gradcheck(&opts).map_err(core)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if report.passes(GRADCHECK_TOLERANCE) {
        println!("gradcheck: PASS (max relative error {:.3e})", report.max_relative_error.max());
        Ok(())
    } else {
        Err(core(Error::Numerical(format!(
            "gradcheck: FAIL (max relative error {:.3e}, tolerance {GRADCHECK_TOLERANCE:.0e})",
            report.max_relative_error.max()
        ))))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
