use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gpe::config::{FlatConfig, GENERATE_KEYS};
use gpe::dataset::{generate_dataset, DatasetPlan, Manifest, Split};
use gpe::rollout::{evaluate_manifest, rollout, LearnedDynamics};
use gpe::state::GraphBuilder;
use gpe::training::{ablation_csv, load_model, read_metrics, train, RunOptions, TrainConfig};
use gpe::trajectory::Trajectory;
use gpe::{GpeError, Result};

#[derive(Parser)]
#[command(name = "gpe", version, about = "Learnable graph-based physics engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write its manifest.
    Generate(GenerateArgs),
    /// Train a model on a dataset manifest.
    Train(TrainArgs),
    /// Roll a trained model out from the start of a trajectory.
    Rollout(RolloutArgs),
    /// Rollout error aggregated over dataset splits.
    Eval(EvalArgs),
    /// Train with and without momentum conservation and compare.
    Ablate(TrainArgs),
    /// Convert a trajectory file to CSV.
    ExportCsv(ExportArgs),
}

#[derive(Args)]
struct Layers {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` override; flags still win.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Layers {
    fn resolve(&self, flags: FlatConfig) -> Result<FlatConfig> {
        let mut cfg = match &self.config {
            Some(p) => FlatConfig::load(p)?,
            None => FlatConfig::new(),
        };
        let mut sets = FlatConfig::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| GpeError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            sets.set(k.trim(), v.trim());
        }
        cfg.merge(&sets);
        cfg.merge(&flags);
        Ok(cfg)
    }
}

fn flag<T: ToString>(cfg: &mut FlatConfig, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        cfg.set(key, v.to_string());
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// viscous_blob or elastic_sheet.
    #[arg(long)]
    system: Option<String>,
    /// Comma-separated training parameter values.
    #[arg(long)]
    params: Option<String>,
    /// Comma-separated held-out parameter values.
    #[arg(long)]
    unseen_params: Option<String>,
    #[arg(long)]
    per_param: Option<usize>,
    #[arg(long)]
    test_per_param: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    n_particles: Option<usize>,
    /// Mesh cells, e.g. `4x4`.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    layers: Layers,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    lr_start: Option<f64>,
    #[arg(long)]
    lr_end: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    cutoff: Option<f64>,
    #[arg(long)]
    val_every: Option<u64>,
    #[arg(long)]
    conserve_momentum: Option<bool>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint of an earlier run with the same config.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop once this many total steps are done.
    #[arg(long)]
    stop_at: Option<u64>,
    #[command(flatten)]
    layers: Layers,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut f = FlatConfig::new();
        flag(&mut f, "manifest", &self.manifest.as_ref().map(|p| p.display().to_string()));
        flag(&mut f, "steps", &self.steps);
        flag(&mut f, "batch", &self.batch);
        flag(&mut f, "seed", &self.seed);
        flag(&mut f, "noise_sigma", &self.noise_sigma);
        flag(&mut f, "lr_start", &self.lr_start);
        flag(&mut f, "lr_end", &self.lr_end);
        flag(&mut f, "rounds", &self.rounds);
        flag(&mut f, "hidden_dim", &self.hidden_dim);
        flag(&mut f, "cutoff", &self.cutoff);
        flag(&mut f, "val_every", &self.val_every);
        flag(&mut f, "conserve_momentum", &self.conserve_momentum);
        self.layers.resolve(f)?.train_config()
    }
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Trajectory supplying the initial frames (and ground truth).
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// First predicted-from frame; defaults to the history length.
    #[arg(long)]
    start: Option<usize>,
    /// Predicted trajectory (GPET).
    #[arg(long)]
    out: PathBuf,
    /// Per-step MSE report; defaults to `<out>.csv`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// train, test, val_unseen or all.
    #[arg(long, default_value = "val_unseen")]
    split: String,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Aggregates CSV; per-trajectory rows go next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let mut f = FlatConfig::new();
    flag(&mut f, "system", &a.system);
    flag(&mut f, "params", &a.params);
    flag(&mut f, "unseen_params", &a.unseen_params);
    flag(&mut f, "per_param", &a.per_param);
    flag(&mut f, "test_per_param", &a.test_per_param);
    flag(&mut f, "seed", &a.seed);
    flag(&mut f, "frames", &a.frames);
    flag(&mut f, "n_particles", &a.n_particles);
    flag(&mut f, "grid", &a.grid);
    let cfg = a.layers.resolve(f)?;
    cfg.reject_unknown(GENERATE_KEYS)?;
    let spec = cfg.sim_spec()?;
    let plan = DatasetPlan {
        train_params: cfg
            .list("params")?
            .ok_or_else(|| GpeError::Config("`params` is required".into()))?,
        unseen_params: cfg.list("unseen_params")?.unwrap_or_default(),
        per_param: cfg.parsed("per_param")?.unwrap_or(1),
        test_per_param: cfg.parsed("test_per_param")?.unwrap_or(0),
    };
    plan.validate(spec.system)?;
    spec.validate()?;
    let (path, manifest) = generate_dataset(&spec, &plan, &a.out)?;

    let mut snap = FlatConfig::new();
    let join = |v: &[f64]| v.iter().map(|p| format!("{p:?}")).collect::<Vec<_>>().join(",");
    snap.set("system", spec.system.as_str());
    snap.set("params", join(&plan.train_params));
    snap.set("unseen_params", join(&plan.unseen_params));
    snap.set("per_param", plan.per_param);
    snap.set("test_per_param", plan.test_per_param);
    snap.set("n_particles", spec.n_particles);
    snap.set("grid", format!("{}x{}", spec.grid_dims[0], spec.grid_dims[1]));
    snap.set("frames", spec.frames);
    snap.set("dt", format!("{:?}", spec.dt));
    snap.set("substeps", spec.substeps);
    snap.set("seed", spec.seed);
    snap.set("box_size", format!("{:?}", spec.box_size));
    snap.set("gravity", format!("{:?}", spec.gravity));
    snap.set("walls", spec.walls);
    snap.set("init_speed", format!("{:?}", spec.init_speed));
    snap.set("boundary_spacing", format!("{:?}", spec.boundary_spacing));
    snap.write_snapshot(&a.out.join("config.txt"))?;
    eprintln!("wrote {} trajectories", manifest.entries.len());
    println!("{}", path.display());
    Ok(())
}

fn run_training(cfg: &TrainConfig, out: &Path, opts: &RunOptions) -> Result<gpe::training::TrainOutcome> {
    fs::create_dir_all(out).map_err(|e| GpeError::io(out, e))?;
    FlatConfig::from_train_config(cfg).write_snapshot(&out.join("config.txt"))?;
    let outcome = train(cfg, out, opts)?;
    if let Some(last) = outcome.metrics.last() {
        eprintln!(
            "step {} train_loss {:e} val_seen {:e} val_unseen {:e}",
            last.step, last.train_loss, last.val_seen, last.val_unseen
        );
    }
    Ok(outcome)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.config()?;
    let opts = RunOptions {
        resume: a.resume.clone(),
        stop_at: a.stop_at,
    };
    let outcome = run_training(&cfg, &a.out, &opts)?;
    println!("{}", outcome.checkpoint.display());
    println!("{}", a.out.join("metrics.csv").display());
    Ok(())
}

fn cmd_ablate(a: &TrainArgs) -> Result<()> {
    let base = a.config()?;
    let mut runs = Vec::new();
    for (name, conserve) in [("conserving", true), ("non_conserving", false)] {
        let mut cfg = base.clone();
        cfg.engine.conserve_momentum = conserve;
        let dir = a.out.join(name);
        eprintln!("ablation run `{name}`");
        run_training(&cfg, &dir, &RunOptions::default())?;
        runs.push(read_metrics(&dir.join("metrics.csv"))?);
        println!("{}", dir.join("checkpoint.toml").display());
    }
    let csv = ablation_csv(&runs[0], &runs[1])?;
    let path = a.out.join("comparison.csv");
    fs::write(&path, csv).map_err(|e| GpeError::io(&path, e))?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_rollout(a: &RolloutArgs) -> Result<bool> {
    let (engine, params, stats) = load_model(&a.checkpoint)?;
    let traj = Trajectory::load(&a.trajectory)?;
    let history = engine.config.history;
    let start = a.start.unwrap_or(history);
    let builder = GraphBuilder::for_trajectory(&traj, history, engine.config.cutoff)?;
    let mut dynamics = LearnedDynamics::new(&engine, &params, &stats, traj.gravity.clone());
    let steps = a.steps.min(traj.num_frames().saturating_sub(start + 1));
    if steps < a.steps {
        eprintln!("ground truth covers only {steps} steps from frame {start}");
    }
    let (pred, report) = rollout(&traj, start, history, &builder, &mut dynamics, steps, Some(&traj))?;
    pred.save(&a.out)?;
    let report_path = a.report.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    report.write_csv(&report_path)?;
    println!("{}", a.out.display());
    println!("{}", report_path.display());
    println!("mean_mse {:e} max_mse {:e} steps {}", report.mean_mse, report.max_mse, report.steps);
    if report.diverged {
        eprintln!("rollout diverged after {} steps", report.steps);
    }
    Ok(!report.diverged)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (engine, params, stats) = load_model(&a.checkpoint)?;
    let manifest = Manifest::load(&a.manifest)?;
    let splits: Vec<Split> = if a.split == "all" {
        Split::ALL.into_iter().filter(|s| manifest.entries(*s).next().is_some()).collect()
    } else {
        vec![Split::parse(&a.split).map_err(|e| GpeError::Config(e.to_string()))?]
    };
    let mut agg = String::from("split,trajectories,aggregate_mse\n");
    let mut rows = String::new();
    for split in splits {
        let ev = evaluate_manifest(&engine, &params, &stats, &manifest, split, a.steps)?;
        let _ = writeln!(agg, "{},{},{:e}", split.as_str(), ev.rows.len(), ev.aggregate);
        let csv = ev.to_csv();
        if rows.is_empty() {
            rows.push_str(&csv);
        } else {
            rows.push_str(csv.split_once('\n').map(|x| x.1).unwrap_or(""));
        }
        println!("{} {:e}", split.as_str(), ev.aggregate);
    }
    fs::write(&a.out, &agg).map_err(|e| GpeError::io(&a.out, e))?;
    let stem = a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let per = a.out.with_file_name(format!("{stem}_trajectories.csv"));
    fs::write(&per, rows).map_err(|e| GpeError::io(&per, e))?;
    println!("{}", a.out.display());
    println!("{}", per.display());
    Ok(())
}

fn cmd_export(a: &ExportArgs) -> Result<()> {
    let traj = Trajectory::load(&a.trajectory)?;
    let d = traj.dim;
    let mut s = String::from("frame,node,kind,param");
    for axis in ["x", "y", "z"].iter().take(d) {
        s.push(',');
        s.push_str(axis);
    }
    s.push('\n');
    for t in 0..traj.num_frames() {
        let frame = traj.frame(t);
        for (i, kind) in traj.kinds.iter().enumerate() {
            let _ = write!(s, "{t},{i},{},{}", kind.type_tag(), kind.param().unwrap_or(0.0));
            for v in &frame[i * d..(i + 1) * d] {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    fs::write(&a.out, s).map_err(|e| GpeError::io(&a.out, e))?;
    println!("{}", a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(|_| true),
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Rollout(a) => cmd_rollout(a),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Ablate(a) => cmd_ablate(a).map(|_| true),
        Command::ExportCsv(a) => cmd_export(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
