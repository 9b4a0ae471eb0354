//! One-step supervised training with noise injection, Adam and checkpoint/resume.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{Manifest, Split};
use crate::engine::{Engine, EngineConfig, NormStats};
use crate::error::{GpeError, Result};
use crate::graph::{BOUNDARY_TAG, VIRTUAL_TAG};
use crate::optim::{adam_step, lr_schedule, AdamConfig};
use crate::params::ParameterStore;
use crate::state::{GraphBuilder, SystemState};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::trajectory::Trajectory;

pub const METRICS_HEADER: &str = "step,lr,train_loss,val_seen,val_unseen,msg_evals,seconds";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Total optimizer steps; also the horizon of the learning-rate schedule.
    pub steps: u64,
    /// Graphs per gradient step.
    pub batch: usize,
    pub noise_sigma: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    pub val_every: u64,
    /// Fixed one-step validation samples per split.
    pub val_samples: usize,
    pub manifest: PathBuf,
    pub engine: EngineConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 2,
            noise_sigma: 3e-3,
            lr_start: 3e-3,
            lr_end: 3e-4,
            seed: 0,
            val_every: 200,
            val_samples: 16,
            manifest: PathBuf::from("manifest.toml"),
            engine: EngineConfig {
                cutoff: 0.06,
                length_scale: 0.05,
                ..EngineConfig::desk()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) {
            return Err(GpeError::Config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if self.batch == 0 {
            return Err(GpeError::Config("batch must be >= 1".into()));
        }
        if !(self.lr_start >= 0.0 && self.lr_end >= 0.0) {
            return Err(GpeError::Config("learning rates must be >= 0".into()));
        }
        if self.val_every == 0 {
            return Err(GpeError::Config("val_every must be >= 1".into()));
        }
        self.engine.validate()
    }
}

/// Node types, dimension and parameter range taken from the dataset; everything else from `base`.
pub fn engine_config_for(manifest: &Manifest, base: &EngineConfig) -> EngineConfig {
    let mut types = vec![BOUNDARY_TAG.to_string(), "m0".to_string()];
    if manifest.system.is_mesh() {
        types.push(VIRTUAL_TAG.to_string());
    }
    EngineConfig {
        node_types: types,
        dim: 2,
        param_range: manifest.param_range(),
        ..base.clone()
    }
}

/// Velocity scale and per-component acceleration mean/std over the material nodes of `trajs`.
pub fn compute_norm_stats(trajs: &[Trajectory]) -> Result<NormStats> {
    let dim = trajs.first().map(|t| t.dim).ok_or_else(|| GpeError::Input("no training trajectories".into()))?;
    let mut v2 = 0.0;
    let mut nv = 0usize;
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    let mut na = 0usize;
    for traj in trajs {
        let mats: Vec<usize> = (0..traj.num_nodes()).filter(|&i| traj.kinds[i].is_material()).collect();
        for t in 1..traj.num_frames() {
            let (a, b) = (traj.frame(t), traj.frame(t - 1));
            for &i in &mats {
                for k in 0..dim {
                    let v = (a[i * dim + k] - b[i * dim + k]) / traj.dt;
                    v2 += v * v;
                    nv += 1;
                }
            }
            if t + 1 < traj.num_frames() {
                let acc = traj.acceleration(t);
                for &i in &mats {
                    for k in 0..dim {
                        let x = acc[i * dim + k];
                        sum[k] += x;
                        sq[k] += x * x;
                    }
                    na += 1;
                }
            }
        }
    }
    if nv == 0 || na == 0 {
        return Err(GpeError::Input("training trajectories contain no material motion".into()));
    }
    let velocity_scale = (v2 / nv as f64).sqrt().max(1e-8);
    let accel_mean: Vec<f64> = sum.iter().map(|s| s / na as f64).collect();
    let accel_std: Vec<f64> = sq
        .iter()
        .zip(&accel_mean)
        .map(|(q, m)| (q / na as f64 - m * m).max(0.0).sqrt().max(1e-8))
        .collect();
    Ok(NormStats {
        velocity_scale,
        accel_mean,
        accel_std,
    })
}

/// A state at frame `t` and what it should predict.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub trajectory: usize,
    pub t: usize,
    pub state: SystemState,
    /// `x^{t+1} − x^t` per node.
    pub target_delta: Vec<f64>,
    /// `(x^{t+1} − 2x^t + x^{t−1})/dt²` per node.
    pub target_accel: Vec<f64>,
}

impl TrainSample {
    pub fn new(traj: &Trajectory, index: usize, t: usize, history: usize) -> Result<Self> {
        if t + 1 >= traj.num_frames() {
            return Err(GpeError::Input(format!("frame {t} has no successor")));
        }
        let state = SystemState::from_trajectory(traj, t, history)?;
        let target_delta = traj.frame(t + 1).iter().zip(traj.frame(t)).map(|(a, b)| a - b).collect();
        Ok(TrainSample {
            trajectory: index,
            t,
            state,
            target_delta,
            target_accel: traj.acceleration(t),
        })
    }

    /// Noisy-frame target position `x^t + (x^{t+1} − x^t)`, relative to the state origin.
    pub fn target_position(&self) -> Vec<f64> {
        self.state.positions.iter().zip(&self.target_delta).map(|(x, d)| x + d).collect()
    }
}

/// Adds one Gaussian vector per material node to its current, past and target
/// positions alike. Velocities, displacements and the acceleration target are
/// therefore unchanged; only the geometry seen by the graph moves.
pub fn inject_noise<R: Rng + ?Sized>(sample: &mut TrainSample, sigma: f64, rng: &mut R) -> Result<()> {
    if !(sigma >= 0.0) {
        return Err(GpeError::Config(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| GpeError::Config(e.to_string()))?;
    let d = sample.state.dim;
    for i in 0..sample.state.num_nodes() {
        if !sample.state.kinds[i].is_material() {
            continue;
        }
        for k in 0..d {
            sample.state.positions[i * d + k] += normal.sample(rng);
        }
    }
    Ok(())
}

/// Standardized acceleration targets of the material nodes, row-major.
pub fn standardized_target(sample: &TrainSample, nodes: &[usize], stats: &NormStats) -> Vec<f64> {
    let d = sample.state.dim;
    let mut raw = Vec::with_capacity(nodes.len() * d);
    for &i in nodes {
        raw.extend_from_slice(&sample.target_accel[i * d..(i + 1) * d]);
    }
    stats.standardize(&raw)
}

/// Taped MSE between predicted and target standardized accelerations.
pub fn compute_loss(
    tape: &mut Tape,
    pred: crate::tape::Var,
    nodes: &[usize],
    sample: &TrainSample,
    stats: &NormStats,
) -> Result<crate::tape::Var> {
    let target = standardized_target(sample, nodes, stats);
    let d = sample.state.dim;
    tape.mse(pred, Tensor::matrix(nodes.len(), d, target)?)
}

/// In-memory dataset with per-trajectory graph builders.
pub struct LoadedSplit {
    pub trajectories: Vec<Trajectory>,
    pub builders: Vec<GraphBuilder>,
    pub names: Vec<String>,
}

impl LoadedSplit {
    pub fn load(manifest: &Manifest, split: Split, history: usize, cutoff: f64) -> Result<Self> {
        let mut out = LoadedSplit {
            trajectories: Vec::new(),
            builders: Vec::new(),
            names: Vec::new(),
        };
        for entry in manifest.entries(split) {
            let traj = Trajectory::load(&manifest.resolve(entry))?;
            if traj.num_frames() < history + 2 {
                return Err(GpeError::Input(format!(
                    "{} has {} frames; training needs at least {}",
                    entry.path,
                    traj.num_frames(),
                    history + 2
                )));
            }
            out.builders.push(GraphBuilder::for_trajectory(&traj, history, cutoff)?);
            out.trajectories.push(traj);
            out.names.push(entry.path.clone());
        }
        Ok(out)
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Uniform trajectory, then uniform frame in `[history, T − 2]`.
    pub fn draw<R: Rng + ?Sized>(&self, history: usize, rng: &mut R) -> Result<TrainSample> {
        let k = rng.random_range(0..self.trajectories.len());
        let traj = &self.trajectories[k];
        let t = rng.random_range(history..=traj.num_frames() - 2);
        TrainSample::new(traj, k, t, history)
    }
}

/// Loss of one batch on a shared tape, weighting graphs by material-node count.
/// Returns the loss value and message-MLP evaluations; gradients go into `params`.
pub fn batch_loss(
    engine: &Engine,
    params: &mut ParameterStore,
    stats: &NormStats,
    split: &LoadedSplit,
    samples: &[TrainSample],
    with_grad: bool,
) -> Result<(f64, u64)> {
    let mut tape = Tape::new();
    let mut terms = Vec::new();
    let mut evals = 0;
    let total: usize = samples.iter().map(|s| s.state.kinds.iter().filter(|k| k.is_material()).count()).sum();
    for s in samples {
        let graph = split.builders[s.trajectory].build(&s.state)?;
        let force = &split.trajectories[s.trajectory].gravity;
        let out = engine.forward_taped(&graph, params, stats, force, &mut tape, None)?;
        evals += out.message_evals;
        let loss = compute_loss(&mut tape, out.accel, &out.nodes, s, stats)?;
        terms.push((loss, out.nodes.len() as f64 / total.max(1) as f64));
    }
    let loss = tape.weighted_sum(terms)?;
    let value = tape.value(loss).data()[0];
    if with_grad && value.is_finite() {
        tape.backward(loss, params)?;
    }
    Ok((value, evals))
}

/// Mean one-step loss over fixed samples, one graph at a time.
pub fn validation_loss(
    engine: &Engine,
    params: &ParameterStore,
    stats: &NormStats,
    split: &LoadedSplit,
    samples: &[TrainSample],
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut sum = 0.0;
    let mut weight = 0.0;
    for s in samples {
        let graph = split.builders[s.trajectory].build(&s.state)?;
        let pred = engine.forward(&graph, params, stats, &split.trajectories[s.trajectory].gravity)?;
        let target = standardized_target(s, &pred.nodes, stats);
        let n = pred.accel.len().max(1) as f64;
        let mse = pred.accel.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        sum += mse * pred.nodes.len() as f64;
        weight += pred.nodes.len() as f64;
    }
    Ok(sum / weight.max(1.0))
}

fn fixed_samples(split: &LoadedSplit, history: usize, count: usize, seed: u64) -> Result<Vec<TrainSample>> {
    if split.is_empty() {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| split.draw(history, &mut rng)).collect()
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_seen: f64,
    pub val_unseen: f64,
    pub msg_evals: u64,
    pub seconds: f64,
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{},{:.3}",
            self.step, self.lr, self.train_loss, self.val_seen, self.val_unseen, self.msg_evals, self.seconds
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return Err(GpeError::Input(format!("metrics row needs 7 fields: `{line}`")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| GpeError::Input(format!("bad number `{s}` in metrics")));
        let int = |s: &str| s.parse::<u64>().map_err(|_| GpeError::Input(format!("bad integer `{s}` in metrics")));
        Ok(MetricsRow {
            step: int(f[0])?,
            lr: num(f[1])?,
            train_loss: num(f[2])?,
            val_seen: num(f[3])?,
            val_unseen: num(f[4])?,
            msg_evals: int(f[5])?,
            seconds: num(f[6])?,
        })
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(|e| GpeError::io(path, e))?;
    text.lines().skip(1).filter(|l| !l.trim().is_empty()).map(MetricsRow::parse).collect()
}

/// Everything a training run produces besides files.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParameterStore,
    pub stats: NormStats,
    pub engine: EngineConfig,
    /// Train loss of every step run in this invocation.
    pub losses: Vec<f64>,
    pub metrics: Vec<MetricsRow>,
    pub final_step: u64,
    pub message_evals: u64,
    pub checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
}

fn f64_meta(v: f64) -> String {
    format!("{v:?}")
}

fn parse_meta<T: std::str::FromStr>(ck: &Checkpoint, key: &str, path: &Path) -> Result<T> {
    ck.meta(key)
        .ok_or_else(|| GpeError::integrity(path, format!("meta.{key}"), "missing"))?
        .parse()
        .map_err(|_| GpeError::integrity(path, format!("meta.{key}"), "unparsable"))
}

/// Writes the engine config, statistics and training counters next to the parameters.
pub fn model_checkpoint(params: &ParameterStore, engine: &EngineConfig, stats: &NormStats) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new(params.clone());
    let cfg = toml::to_string(engine).map_err(|e| GpeError::Config(e.to_string()))?;
    ck.meta.insert("engine".into(), cfg);
    ck.meta.insert("velocity_scale".into(), f64_meta(stats.velocity_scale));
    for (k, (m, s)) in stats.accel_mean.iter().zip(&stats.accel_std).enumerate() {
        ck.meta.insert(format!("accel_mean_{k}"), f64_meta(*m));
        ck.meta.insert(format!("accel_std_{k}"), f64_meta(*s));
    }
    Ok(ck)
}

/// Engine, parameters and statistics from a checkpoint written by training.
pub fn load_model(path: &Path) -> Result<(Engine, ParameterStore, NormStats)> {
    let ck = Checkpoint::load(path)?;
    let engine_text = ck
        .meta("engine")
        .ok_or_else(|| GpeError::integrity(path, "meta.engine", "missing"))?;
    let cfg: EngineConfig =
        toml::from_str(engine_text).map_err(|e| GpeError::integrity(path, "meta.engine", e.message().to_string()))?;
    let mut stats = NormStats {
        velocity_scale: parse_meta(&ck, "velocity_scale", path)?,
        accel_mean: Vec::new(),
        accel_std: Vec::new(),
    };
    for k in 0..cfg.dim {
        stats.accel_mean.push(parse_meta(&ck, &format!("accel_mean_{k}"), path)?);
        stats.accel_std.push(parse_meta(&ck, &format!("accel_std_{k}"), path)?);
    }
    let engine = Engine::new(cfg).map_err(|e| GpeError::integrity(path, "meta.engine", e.to_string()))?;
    for mlp in engine.config.all_mlps() {
        if !ck.store.has_function(&mlp.func) {
            return Err(GpeError::integrity(path, "tensor", format!("missing parameters for {}", mlp.func)));
        }
    }
    Ok((engine, ck.store, stats))
}

/// Options for a single invocation of [`train`].
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Continue from this checkpoint (written by an earlier run of the same config).
    pub resume: Option<PathBuf>,
    /// Stop after this many total steps even if the budget is larger.
    pub stop_at: Option<u64>,
}

/// Runs (or resumes) training and writes `checkpoint.toml`, `best.toml` and
/// `metrics.csv` into `out_dir`.
pub fn train(config: &TrainConfig, out_dir: &Path, opts: &RunOptions) -> Result<TrainOutcome> {
    config.validate()?;
    let manifest = Manifest::load(&config.manifest)?;
    let engine_cfg = engine_config_for(&manifest, &config.engine);
    let engine = Engine::new(engine_cfg.clone())?;
    let history = engine_cfg.history;
    let train_split = LoadedSplit::load(&manifest, Split::Train, history, engine_cfg.cutoff)?;
    if train_split.is_empty() {
        return Err(GpeError::Input(format!("{} has no train trajectories", config.manifest.display())));
    }
    let test_split = LoadedSplit::load(&manifest, Split::Test, history, engine_cfg.cutoff)?;
    let unseen_split = LoadedSplit::load(&manifest, Split::ValUnseen, history, engine_cfg.cutoff)?;
    let seen_split = if test_split.is_empty() { &train_split } else { &test_split };
    let val_seen = fixed_samples(seen_split, history, config.val_samples, config.seed ^ 0x5eed_0001)?;
    let val_unseen = fixed_samples(&unseen_split, history, config.val_samples, config.seed ^ 0x5eed_0002)?;

    fs::create_dir_all(out_dir).map_err(|e| GpeError::io(out_dir, e))?;
    let ck_path = out_dir.join("checkpoint.toml");
    let best_path = out_dir.join("best.toml");
    let metrics_path = out_dir.join("metrics.csv");

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut params, stats, mut step, mut evals, mut best) = match &opts.resume {
        None => {
            let stats = compute_norm_stats(&train_split.trajectories)?;
            let params = engine_cfg.init_params(&mut rng)?;
            fs::write(&metrics_path, format!("{METRICS_HEADER}\n")).map_err(|e| GpeError::io(&metrics_path, e))?;
            (params, stats, 0u64, 0u64, f64::INFINITY)
        }
        Some(path) => {
            let (eng, params, stats) = load_model(path)?;
            if eng.config != engine_cfg {
                return Err(GpeError::Config(format!("{} was trained with a different engine config", path.display())));
            }
            let ck = Checkpoint::load(path)?;
            let step: u64 = parse_meta(&ck, "step", path)?;
            let evals: u64 = parse_meta(&ck, "message_evals", path)?;
            let best: f64 = parse_meta(&ck, "best_val", path)?;
            let word_pos: u128 = parse_meta(&ck, "rng_word_pos", path)?;
            rng.set_word_pos(word_pos);
            (params, stats, step, evals, best)
        }
    };

    let stop = opts.stop_at.unwrap_or(config.steps).min(config.steps);
    let adam = AdamConfig::default();
    let started = Instant::now();
    let mut losses = Vec::new();
    let mut metrics = Vec::new();
    let mut window = Vec::new();
    let save = |params: &ParameterStore, path: &Path, step: u64, evals: u64, best: f64, rng: &ChaCha8Rng| -> Result<()> {
        let mut ck = model_checkpoint(params, &engine_cfg, &stats)?;
        ck.meta.insert("step".into(), step.to_string());
        ck.meta.insert("message_evals".into(), evals.to_string());
        ck.meta.insert("best_val".into(), f64_meta(best));
        ck.meta.insert("rng_word_pos".into(), rng.get_word_pos().to_string());
        ck.meta.insert("seed".into(), config.seed.to_string());
        ck.save(path)
    };

    while step < stop {
        let lr = lr_schedule(step, config.steps, config.lr_start, config.lr_end);
        let mut samples = Vec::with_capacity(config.batch);
        for _ in 0..config.batch {
            let mut s = train_split.draw(history, &mut rng)?;
            inject_noise(&mut s, config.noise_sigma, &mut rng)?;
            samples.push(s);
        }
        params.zero_grad();
        let (loss, e) = batch_loss(&engine, &mut params, &stats, &train_split, &samples, true)?;
        if !loss.is_finite() {
            let s = &samples[0];
            return Err(GpeError::NonFinite {
                what: format!(
                    "training loss at step {} (batch starting with {} frame {})",
                    step + 1,
                    train_split.names[s.trajectory],
                    s.t
                ),
            });
        }
        adam_step(&mut params, lr, adam, step + 1)?;
        step += 1;
        evals += e;
        losses.push(loss);
        window.push(loss);

        if step % config.val_every == 0 || step == stop {
            let vs = validation_loss(&engine, &params, &stats, seen_split, &val_seen)?;
            let vu = validation_loss(&engine, &params, &stats, &unseen_split, &val_unseen)?;
            let row = MetricsRow {
                step,
                lr,
                train_loss: window.iter().sum::<f64>() / window.len() as f64,
                val_seen: vs,
                val_unseen: vu,
                msg_evals: evals,
                seconds: started.elapsed().as_secs_f64(),
            };
            window.clear();
            let mut f = OpenOptions::new()
                .append(true)
                .create(true)
                .open(&metrics_path)
                .map_err(|e| GpeError::io(&metrics_path, e))?;
            writeln!(f, "{}", row.to_csv_line()).map_err(|e| GpeError::io(&metrics_path, e))?;
            let key = if vu.is_nan() { vs } else { vu };
            if key < best || !best_path.exists() {
                best = key.min(best);
                save(&params, &best_path, step, evals, best, &rng)?;
            }
            metrics.push(row);
            save(&params, &ck_path, step, evals, best, &rng)?;
        }
    }
    if !ck_path.exists() || metrics.is_empty() {
        save(&params, &ck_path, step, evals, best, &rng)?;
    }
    Ok(TrainOutcome {
        params,
        stats,
        engine: engine_cfg,
        losses,
        metrics,
        final_step: step,
        message_evals: evals,
        checkpoint: ck_path,
        best_checkpoint: best_path,
    })
}

/// Side-by-side validation curves: `step,val_conserving,val_non_conserving` on the shared step grid.
pub fn ablation_csv(on: &[MetricsRow], off: &[MetricsRow]) -> Result<String> {
    let mut s = String::from("step,val_unseen_conserving,val_unseen_non_conserving,val_seen_conserving,val_seen_non_conserving\n");
    let by_step: BTreeMap<u64, &MetricsRow> = off.iter().map(|r| (r.step, r)).collect();
    for r in on {
        let o = by_step
            .get(&r.step)
            .ok_or_else(|| GpeError::Input(format!("step {} missing from the non-conserving log", r.step)))?;
        let _ = writeln!(s, "{},{:e},{:e},{:e},{:e}", r.step, r.val_unseen, o.val_unseen, r.val_seen, o.val_seen);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeKind;

    fn toy_traj() -> Trajectory {
        let frames: Vec<f64> = (0..8)
            .flat_map(|t| {
                let t = t as f64;
                [0.1 * t, 0.5 - 0.01 * t * t, 0.2 + 0.05 * t, 0.5, 0.0, 0.0]
            })
            .collect();
        Trajectory {
            dim: 2,
            dt: 0.1,
            param: 1.0,
            param_range: (0.0, 2.0),
            system: None,
            gravity: vec![0.0, -9.81],
            grid_dims: None,
            kinds: vec![NodeKind::material(0, 1.0), NodeKind::material(0, 1.0), NodeKind::Boundary],
            frames,
        }
    }

    #[test]
    fn zero_sigma_leaves_sample_unchanged() {
        let s = TrainSample::new(&toy_traj(), 0, 4, 3).unwrap();
        let mut n = s.clone();
        inject_noise(&mut n, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(n, s);
    }

    #[test]
    fn noise_moves_positions_only() {
        let s = TrainSample::new(&toy_traj(), 0, 4, 3).unwrap();
        let mut n = s.clone();
        inject_noise(&mut n, 1e-2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_ne!(n.state.positions, s.state.positions);
        assert_eq!(n.state.velocities, s.state.velocities);
        assert_eq!(n.target_delta, s.target_delta);
        assert_eq!(n.target_accel, s.target_accel);
        assert_eq!(&n.state.positions[4..6], &s.state.positions[4..6]);
    }

    #[test]
    fn negative_sigma_is_config_error() {
        let mut s = TrainSample::new(&toy_traj(), 0, 4, 3).unwrap();
        assert!(inject_noise(&mut s, -1.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn loss_is_zero_at_target_and_delta_squared_off_target() {
        let s = TrainSample::new(&toy_traj(), 0, 4, 3).unwrap();
        let stats = NormStats::identity(2);
        let nodes = [0usize, 1];
        let target = standardized_target(&s, &nodes, &stats);
        let mut tape = Tape::new();
        let p = tape.constant(2, 2, target.clone()).unwrap();
        let l = compute_loss(&mut tape, p, &nodes, &s, &stats).unwrap();
        assert_eq!(tape.value(l).data()[0], 0.0);
        let shifted: Vec<f64> = target.iter().map(|v| v + 0.25).collect();
        let p = tape.constant(2, 2, shifted).unwrap();
        let l = compute_loss(&mut tape, p, &nodes, &s, &stats).unwrap();
        assert!((tape.value(l).data()[0] - 0.0625).abs() < 1e-12);
    }

    #[test]
    fn norm_stats_of_parabola() {
        let stats = compute_norm_stats(&[toy_traj()]).unwrap();
        // node 0: a = (0, −2); node 1: a = (0, 0)
        assert!((stats.accel_mean[1] + 1.0).abs() < 1e-9);
        assert!((stats.accel_std[1] - 1.0).abs() < 1e-9);
        assert!(stats.accel_std[0] <= 1e-8 + 1e-12);
    }

    #[test]
    fn metrics_row_round_trips() {
        let r = MetricsRow {
            step: 200,
            lr: 1e-3,
            train_loss: 0.5,
            val_seen: 0.25,
            val_unseen: f64::NAN,
            msg_evals: 12345,
            seconds: 1.5,
        };
        let back = MetricsRow::parse(&r.to_csv_line()).unwrap();
        assert_eq!(back.step, 200);
        assert!(back.val_unseen.is_nan());
        assert_eq!(back.train_loss, 0.5);
    }
}
