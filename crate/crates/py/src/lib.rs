//! Python bindings: simulators, graph builders, training and rollout.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gpe::config::{FlatConfig, TRAIN_KEYS};
use gpe::dataset::{generate_dataset as core_generate, DatasetPlan, Manifest, Split};
use gpe::engine::{Engine, NormStats};
use gpe::graph::{build_multiscale_grid, build_radius_graph, MeshTopology, NodeKind};
use gpe::params::ParameterStore;
use gpe::rollout::{evaluate_manifest, rollout as core_rollout, LearnedDynamics};
use gpe::sims::{simulate as core_simulate, SimSpec};
use gpe::state::{GraphBuilder, SystemState};
use gpe::training::{load_model, train as core_train, RunOptions};
use gpe::trajectory::{SystemKind, Trajectory};
use gpe::GpeError;

fn to_py(e: GpeError) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        3 => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn spec_for(system: &str, param: f64, seed: u64) -> PyResult<SimSpec> {
    match SystemKind::parse(system).map_err(to_py)? {
        SystemKind::ViscousBlob => Ok(SimSpec::viscous_blob(param, seed)),
        SystemKind::ElasticSheet => Ok(SimSpec::elastic_sheet(param, seed)),
    }
}

/// Frames of node positions with static node metadata.
#[pyclass(name = "Trajectory", module = "gpe_py", skip_from_py_object)]
#[derive(Clone)]
struct PyTrajectory {
    inner: Trajectory,
}

#[pymethods]
impl PyTrajectory {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Trajectory::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn num_frames(&self) -> usize {
        self.inner.num_frames()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn param(&self) -> f64 {
        self.inner.param
    }

    #[getter]
    fn system(&self) -> Option<&'static str> {
        self.inner.system.map(SystemKind::as_str)
    }

    /// Type tag per node, e.g. `"boundary"` or `"m0"`.
    #[getter]
    fn kinds(&self) -> Vec<String> {
        self.inner.kinds.iter().map(NodeKind::type_tag).collect()
    }

    /// Positions of frame `t` as one `[x, y(, z)]` row per node.
    fn frame(&self, t: usize) -> PyResult<Vec<Vec<f64>>> {
        if t >= self.inner.num_frames() {
            return Err(PyValueError::new_err(format!("frame {t} out of range (0..{})", self.inner.num_frames())));
        }
        Ok(self.inner.frame(t).chunks(self.inner.dim).map(<[f64]>::to_vec).collect())
    }

    /// Finite-difference accelerations at interior frame `t`.
    fn acceleration(&self, t: usize) -> PyResult<Vec<Vec<f64>>> {
        if t == 0 || t + 1 >= self.inner.num_frames() {
            return Err(PyValueError::new_err(format!("no acceleration at frame {t}")));
        }
        Ok(self.inner.acceleration(t).chunks(self.inner.dim).map(<[f64]>::to_vec).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Trajectory(system={:?}, param={}, nodes={}, frames={})",
            self.system().unwrap_or("none"),
            self.inner.param,
            self.inner.num_nodes(),
            self.inner.num_frames()
        )
    }
}

/// Runs a reference simulator.
#[pyfunction]
#[pyo3(signature = (system, param, seed=0, frames=None, n_particles=None))]
fn simulate(system: &str, param: f64, seed: u64, frames: Option<usize>, n_particles: Option<usize>) -> PyResult<PyTrajectory> {
    let mut spec = spec_for(system, param, seed)?;
    if let Some(f) = frames {
        spec.frames = f;
    }
    if let Some(n) = n_particles {
        spec.n_particles = n;
    }
    Ok(PyTrajectory {
        inner: core_simulate(&spec).map_err(to_py)?,
    })
}

/// Unordered pairs `(i, j)`, `i < j`, closer than `r`.
#[pyfunction]
fn radius_graph(positions: Vec<Vec<f64>>, r: f64) -> PyResult<Vec<(u32, u32)>> {
    let dim = positions.first().map_or(2, Vec::len);
    if positions.iter().any(|p| p.len() != dim) {
        return Err(PyValueError::new_err("all positions must have the same dimension"));
    }
    let flat: Vec<f64> = positions.concat();
    let kinds = vec![NodeKind::material(0, 0.0); positions.len()];
    let pairs = build_radius_graph(&flat, &kinds, dim, r).map_err(to_py)?;
    Ok(pairs.into_iter().map(|p| (p.i, p.j)).collect())
}

/// Node and per-class edge counts of the multi-scale graph over an `nx × ny` cell grid.
#[pyfunction]
fn multiscale_counts<'py>(py: Python<'py>, nx: usize, ny: usize) -> PyResult<Bound<'py, PyDict>> {
    let mesh = MeshTopology::grid(nx, ny).map_err(to_py)?;
    let n = (nx + 1) * (ny + 1);
    let positions: Vec<f64> = (0..n).flat_map(|v| [(v % (nx + 1)) as f64, (v / (nx + 1)) as f64]).collect();
    let kinds = vec![NodeKind::material(0, 0.0); n];
    let g = build_multiscale_grid(&mesh, &positions, &kinds, 1).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("nodes", g.num_nodes())?;
    out.set_item("virtual_nodes", g.kinds.iter().filter(|k| k.is_virtual()).count())?;
    for p in &g.pairs {
        let key = p.class.as_str();
        let prev: usize = out.get_item(key)?.map(|v| v.extract()).transpose()?.unwrap_or(0);
        out.set_item(key, prev + 1)?;
    }
    Ok(out)
}

/// Writes trajectories and `manifest.toml` into `out_dir`; returns the manifest path.
#[pyfunction]
#[pyo3(signature = (system, params, out_dir, unseen_params=Vec::new(), per_param=1, test_per_param=0, seed=0, frames=None, n_particles=None))]
#[allow(clippy::too_many_arguments)]
fn generate_dataset(
    system: &str,
    params: Vec<f64>,
    out_dir: PathBuf,
    unseen_params: Vec<f64>,
    per_param: usize,
    test_per_param: usize,
    seed: u64,
    frames: Option<usize>,
    n_particles: Option<usize>,
) -> PyResult<PathBuf> {
    let mut spec = spec_for(system, 0.0, seed)?;
    if let Some(f) = frames {
        spec.frames = f;
    }
    if let Some(n) = n_particles {
        spec.n_particles = n;
    }
    let plan = DatasetPlan {
        train_params: params,
        unseen_params,
        per_param,
        test_per_param,
    };
    plan.validate(spec.system).map_err(to_py)?;
    let (path, _) = core_generate(&spec, &plan, &out_dir).map_err(to_py)?;
    Ok(path)
}

fn flat_from_kwargs(manifest: &PathBuf, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<FlatConfig> {
    let mut f = FlatConfig::new();
    f.set("manifest", manifest.display());
    if let Some(kw) = kwargs {
        for (k, v) in kw.iter() {
            let key: String = k.extract()?;
            let value = match v.extract::<bool>() {
                Ok(b) if v.is_instance_of::<pyo3::types::PyBool>() => b.to_string(),
                _ => v.str()?.to_string(),
            };
            f.set(key, value);
        }
    }
    f.reject_unknown(TRAIN_KEYS).map_err(to_py)?;
    Ok(f)
}

/// Trains on a manifest; keyword arguments override any training key.
/// Returns the paths of the written artifacts and the final metrics.
#[pyfunction]
#[pyo3(signature = (manifest, out_dir, **kwargs))]
fn train<'py>(
    py: Python<'py>,
    manifest: PathBuf,
    out_dir: PathBuf,
    kwargs: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = flat_from_kwargs(&manifest, kwargs)?.train_config().map_err(to_py)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| to_py(GpeError::io(&out_dir, e)))?;
    FlatConfig::from_train_config(&cfg)
        .write_snapshot(&out_dir.join("config.txt"))
        .map_err(to_py)?;
    let outcome = py
        .detach(|| core_train(&cfg, &out_dir, &RunOptions::default()))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("checkpoint", outcome.checkpoint)?;
    out.set_item("best_checkpoint", outcome.best_checkpoint)?;
    out.set_item("metrics", out_dir.join("metrics.csv"))?;
    out.set_item("losses", outcome.losses)?;
    out.set_item("message_evals", outcome.message_evals)?;
    if let Some(last) = outcome.metrics.last() {
        out.set_item("val_seen", last.val_seen)?;
        out.set_item("val_unseen", last.val_unseen)?;
    }
    Ok(out)
}

/// A trained engine loaded from a checkpoint.
#[pyclass(name = "Model", module = "gpe_py")]
struct PyModel {
    engine: Engine,
    params: ParameterStore,
    stats: NormStats,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (engine, params, stats) = load_model(&path).map_err(to_py)?;
        Ok(Self { engine, params, stats })
    }

    #[getter]
    fn history(&self) -> usize {
        self.engine.config.history
    }

    #[getter]
    fn conserve_momentum(&self) -> bool {
        self.engine.config.conserve_momentum
    }

    /// Predicted physical accelerations (one row per node; zero for non-material nodes)
    /// for frame `t` of `trajectory`.
    fn predict(&self, trajectory: &PyTrajectory, t: usize) -> PyResult<Vec<Vec<f64>>> {
        use gpe::rollout::Dynamics;
        let traj = &trajectory.inner;
        let history = self.engine.config.history;
        let state = SystemState::from_trajectory(traj, t, history).map_err(to_py)?;
        let builder = GraphBuilder::for_trajectory(traj, history, self.engine.config.cutoff).map_err(to_py)?;
        let graph = builder.build(&state).map_err(to_py)?;
        let mut dynamics = LearnedDynamics::new(&self.engine, &self.params, &self.stats, traj.gravity.clone());
        let accel = dynamics.accelerations(&state, &graph, t).map_err(to_py)?;
        Ok(accel.chunks(traj.dim).map(<[f64]>::to_vec).collect())
    }

    /// Closed-loop rollout from frame `start` (default: the history length).
    /// Returns the predicted trajectory and a report dict compared against the input.
    #[pyo3(signature = (trajectory, n_steps, start=None))]
    fn rollout<'py>(
        &self,
        py: Python<'py>,
        trajectory: &PyTrajectory,
        n_steps: usize,
        start: Option<usize>,
    ) -> PyResult<(PyTrajectory, Bound<'py, PyDict>)> {
        let traj = &trajectory.inner;
        let history = self.engine.config.history;
        let start = start.unwrap_or(history);
        let builder = GraphBuilder::for_trajectory(traj, history, self.engine.config.cutoff).map_err(to_py)?;
        let mut dynamics = LearnedDynamics::new(&self.engine, &self.params, &self.stats, traj.gravity.clone());
        let steps = n_steps.min(traj.num_frames().saturating_sub(start + 1));
        let (pred, report) =
            core_rollout(traj, start, history, &builder, &mut dynamics, steps, Some(traj)).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("per_step_mse", report.per_step_mse)?;
        out.set_item("mean_mse", report.mean_mse)?;
        out.set_item("max_mse", report.max_mse)?;
        out.set_item("steps", report.steps)?;
        out.set_item("diverged", report.diverged)?;
        Ok((PyTrajectory { inner: pred }, out))
    }

    /// Mean over trajectories of the per-trajectory rollout MSE on one split.
    #[pyo3(signature = (manifest, split="val_unseen", n_steps=200))]
    fn evaluate(&self, py: Python<'_>, manifest: PathBuf, split: &str, n_steps: usize) -> PyResult<f64> {
        let m = Manifest::load(&manifest).map_err(to_py)?;
        let split = Split::parse(split).map_err(to_py)?;
        let ev = py
            .detach(|| evaluate_manifest(&self.engine, &self.params, &self.stats, &m, split, n_steps))
            .map_err(to_py)?;
        Ok(ev.aggregate)
    }
}

#[pymodule]
fn gpe_py(_py: Python, m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(radius_graph, m)?)?;
    m.add_function(wrap_pyfunction!(multiscale_counts, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
