//! Closed-loop rollout: predict accelerations, integrate, rebuild the graph, repeat.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataset::{Manifest, Split};
use crate::engine::{Engine, NormStats};
use crate::error::{GpeError, Result};
use crate::graph::SystemGraph;
use crate::params::ParameterStore;
use crate::state::{GraphBuilder, SystemState};
use crate::trajectory::Trajectory;

/// Positions beyond this magnitude (relative to the rollout origin) count as divergence.
pub const MAX_EXTENT: f64 = 1e4;

/// Source of per-node accelerations (`n × dim`, physical units) for a state.
pub trait Dynamics {
    /// `frame` is the trajectory frame index the state corresponds to.
    fn accelerations(&mut self, state: &SystemState, graph: &SystemGraph, frame: usize) -> Result<Vec<f64>>;
}

/// The learned engine with its parameters and data statistics.
pub struct LearnedDynamics<'a> {
    pub engine: &'a Engine,
    pub params: &'a ParameterStore,
    pub stats: &'a NormStats,
    /// External acceleration fed as the force feature (gravity).
    pub force: Vec<f64>,
    /// Message-MLP evaluations so far.
    pub message_evals: u64,
}

impl<'a> LearnedDynamics<'a> {
    pub fn new(engine: &'a Engine, params: &'a ParameterStore, stats: &'a NormStats, force: Vec<f64>) -> Self {
        LearnedDynamics {
            engine,
            params,
            stats,
            force,
            message_evals: 0,
        }
    }
}

impl Dynamics for LearnedDynamics<'_> {
    fn accelerations(&mut self, state: &SystemState, graph: &SystemGraph, _frame: usize) -> Result<Vec<f64>> {
        let pred = self.engine.forward(graph, self.params, self.stats, &self.force)?;
        self.message_evals += pred.message_evals;
        let physical = self.stats.destandardize(&pred.accel);
        let d = state.dim;
        let mut accel = vec![0.0; state.num_nodes() * d];
        for (row, &i) in pred.nodes.iter().enumerate() {
            accel[i * d..(i + 1) * d].copy_from_slice(&physical[row * d..(row + 1) * d]);
        }
        Ok(accel)
    }
}

/// Finite-difference accelerations of a reference trajectory.
pub struct GroundTruthDynamics<'a> {
    pub trajectory: &'a Trajectory,
}

impl Dynamics for GroundTruthDynamics<'_> {
    fn accelerations(&mut self, _state: &SystemState, _graph: &SystemGraph, frame: usize) -> Result<Vec<f64>> {
        if frame == 0 || frame + 1 >= self.trajectory.num_frames() {
            return Err(GpeError::Input(format!("no reference acceleration at frame {frame}")));
        }
        Ok(self.trajectory.acceleration(frame))
    }
}

/// Same acceleration for every node.
pub struct ConstantDynamics(pub Vec<f64>);

impl Dynamics for ConstantDynamics {
    fn accelerations(&mut self, state: &SystemState, _graph: &SystemGraph, _frame: usize) -> Result<Vec<f64>> {
        Ok(self.0.iter().copied().cycle().take(state.num_nodes() * state.dim).collect())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutReport {
    /// Mean squared position error over material nodes and components, per step.
    pub per_step_mse: Vec<f64>,
    pub mean_mse: f64,
    pub max_mse: f64,
    pub steps: usize,
    pub diverged: bool,
}

impl RolloutReport {
    fn finish(&mut self) {
        let n = self.per_step_mse.len();
        self.mean_mse = if n == 0 { 0.0 } else { self.per_step_mse.iter().sum::<f64>() / n as f64 };
        self.max_mse = self.per_step_mse.iter().copied().fold(0.0, f64::max);
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,mse\n");
        for (k, m) in self.per_step_mse.iter().enumerate() {
            let _ = writeln!(s, "{},{m:e}", k + 1);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| GpeError::io(path, e))
    }
}

/// One rollout step: graph from `state`, accelerations, semi-implicit Euler.
pub fn step(
    state: &mut SystemState,
    builder: &GraphBuilder,
    dynamics: &mut dyn Dynamics,
    frame: usize,
    dt: f64,
) -> Result<()> {
    let graph = builder.build(state)?;
    let accel = dynamics.accelerations(state, &graph, frame)?;
    state.advance(&accel, dt)
}

fn material_mse(state_abs: &[f64], truth: &[f64], traj: &Trajectory) -> f64 {
    let d = traj.dim;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, kind) in traj.kinds.iter().enumerate() {
        if !kind.is_material() {
            continue;
        }
        for k in 0..d {
            let e = state_abs[i * d + k] - truth[i * d + k];
            sum += e * e;
        }
        count += d;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Runs `n_steps` from frame `start` of `initial` (which must be `>= history`).
///
/// The returned trajectory holds frames `start − history ..= start` of the
/// input followed by one frame per completed step. When `ground_truth` is
/// given its frames `start + k` are compared against the prediction.
pub fn rollout(
    initial: &Trajectory,
    start: usize,
    history: usize,
    builder: &GraphBuilder,
    dynamics: &mut dyn Dynamics,
    n_steps: usize,
    ground_truth: Option<&Trajectory>,
) -> Result<(Trajectory, RolloutReport)> {
    let mut state = SystemState::from_trajectory(initial, start, history)?;
    if let Some(gt) = ground_truth {
        if gt.num_nodes() != initial.num_nodes() || gt.dim != initial.dim {
            return Err(GpeError::Input("ground truth does not match the initial state".into()));
        }
        if start + n_steps >= gt.num_frames() {
            return Err(GpeError::Input(format!(
                "ground truth has {} frames; {n_steps} steps from frame {start} need {}",
                gt.num_frames(),
                start + n_steps + 1
            )));
        }
    }
    let w = initial.num_nodes() * initial.dim;
    let mut frames: Vec<f64> = initial.frames[(start - history) * w..(start + 1) * w].to_vec();
    let mut report = RolloutReport::default();
    for k in 0..n_steps {
        step(&mut state, builder, dynamics, start + k, initial.dt)?;
        if !state.is_finite() || state.positions.iter().any(|x| x.abs() > MAX_EXTENT) {
            report.diverged = true;
            break;
        }
        let abs = state.absolute_positions();
        if let Some(gt) = ground_truth {
            report.per_step_mse.push(material_mse(&abs, gt.frame(start + k + 1), gt));
        }
        frames.extend_from_slice(&abs);
        report.steps += 1;
    }
    report.finish();
    let predicted = Trajectory {
        frames,
        ..initial.clone()
    };
    Ok((predicted, report))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitEvaluation {
    pub split: Split,
    /// `(path, param, mean_mse, steps, diverged)` per trajectory.
    pub rows: Vec<(String, f64, f64, usize, bool)>,
    /// Mean of the per-trajectory mean MSEs.
    pub aggregate: f64,
}

impl SplitEvaluation {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("split,path,param,mean_mse,steps,diverged\n");
        for (path, param, mse, steps, div) in &self.rows {
            let _ = writeln!(s, "{},{path},{param},{mse:e},{steps},{div}", self.split.as_str());
        }
        s
    }
}

/// Rolls out the learned model on every trajectory of `split`, starting at frame `history`.
pub fn evaluate_manifest(
    engine: &Engine,
    params: &ParameterStore,
    stats: &NormStats,
    manifest: &Manifest,
    split: Split,
    n_steps: usize,
) -> Result<SplitEvaluation> {
    let entries: Vec<_> = manifest.entries(split).collect();
    if entries.is_empty() {
        return Err(GpeError::Input(format!("split `{}` has no trajectories", split.as_str())));
    }
    let history = engine.config.history;
    let mut rows = Vec::new();
    for entry in entries {
        let traj = Trajectory::load(&manifest.resolve(entry))?;
        let steps = n_steps.min(traj.num_frames().saturating_sub(history + 1));
        let builder = GraphBuilder::for_trajectory(&traj, history, engine.config.cutoff)?;
        let mut dynamics = LearnedDynamics::new(engine, params, stats, traj.gravity.clone());
        let (_, report) = rollout(&traj, history, history, &builder, &mut dynamics, steps, Some(&traj))?;
        rows.push((entry.path.clone(), entry.param, report.mean_mse, report.steps, report.diverged));
    }
    let aggregate = rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64;
    Ok(SplitEvaluation { split, rows, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sims::{simulate, SimSpec};

    fn blob(frames: usize) -> Trajectory {
        let mut spec = SimSpec::viscous_blob(0.8, 3);
        spec.n_particles = 20;
        spec.frames = frames;
        simulate(&spec).unwrap()
    }

    #[test]
    fn zero_steps_returns_seed_frames() {
        let traj = blob(10);
        let builder = GraphBuilder::for_trajectory(&traj, 3, 0.08).unwrap();
        let (pred, report) = rollout(&traj, 3, 3, &builder, &mut ConstantDynamics(vec![0.0, 0.0]), 0, Some(&traj)).unwrap();
        assert_eq!(report, RolloutReport::default());
        assert_eq!(pred.frames, traj.frames[..4 * traj.num_nodes() * 2].to_vec());
    }

    #[test]
    fn zero_acceleration_from_rest_stays_put() {
        let mut traj = blob(4);
        let f0 = traj.frame(0).to_vec();
        traj.frames = f0.repeat(4);
        let builder = GraphBuilder::for_trajectory(&traj, 2, 0.08).unwrap();
        let (pred, report) = rollout(&traj, 2, 2, &builder, &mut ConstantDynamics(vec![0.0, 0.0]), 50, None).unwrap();
        assert_eq!(report.steps, 50);
        for t in 0..pred.num_frames() {
            assert_eq!(pred.frame(t), &f0[..]);
        }
    }

    #[test]
    fn constant_acceleration_gives_discrete_parabola() {
        let mut traj = blob(4);
        let f0 = traj.frame(0).to_vec();
        traj.frames = f0.repeat(4);
        let g = -9.81;
        let dt = traj.dt;
        let builder = GraphBuilder::for_trajectory(&traj, 1, 0.08).unwrap();
        let (pred, _) = rollout(&traj, 1, 1, &builder, &mut ConstantDynamics(vec![0.0, g]), 40, None).unwrap();
        for n in 0..=40usize {
            let frame = pred.frame(n + 1);
            for (i, kind) in traj.kinds.iter().enumerate() {
                let expected = if kind.is_material() {
                    f0[2 * i + 1] + g * dt * dt * (n * (n + 1)) as f64 / 2.0
                } else {
                    f0[2 * i + 1]
                };
                assert!((frame[2 * i + 1] - expected).abs() < 1e-12, "step {n} node {i}");
            }
        }
    }

    #[test]
    fn report_mean_matches_series() {
        let mut r = RolloutReport {
            per_step_mse: vec![1.0, 2.0, 4.5],
            ..Default::default()
        };
        r.finish();
        assert_eq!(r.mean_mse, 2.5);
        assert_eq!(r.max_mse, 4.5);
        assert_eq!(r.to_csv(), "step,mse\n1,1e0\n2,2e0\n3,4.5e0\n");
    }

    #[test]
    fn too_short_ground_truth_is_rejected() {
        let traj = blob(10);
        let builder = GraphBuilder::for_trajectory(&traj, 3, 0.08).unwrap();
        let err = rollout(&traj, 3, 3, &builder, &mut ConstantDynamics(vec![0.0, 0.0]), 7, Some(&traj)).unwrap_err();
        assert!(matches!(err, GpeError::Input(_)));
    }
}
