//! Simulation state (positions plus velocity history) and graph construction from it.

use crate::error::{GpeError, Result};
use crate::graph::{build_multiscale_grid, particle_graph, NodeKind, SystemGraph};
use crate::trajectory::Trajectory;

/// Positions and velocity history of the real (non-virtual) nodes.
///
/// Positions are kept relative to `origin`, the first node's position in the
/// frame the state was created from, so the dynamics never see absolute
/// coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub dim: usize,
    pub history: usize,
    pub kinds: Vec<NodeKind>,
    pub origin: Vec<f64>,
    /// `n × dim`, relative to `origin`.
    pub positions: Vec<f64>,
    /// `n × history × dim`, most recent first.
    pub velocities: Vec<f64>,
    /// Absolute positions at creation; boundary nodes are reported from here.
    pub initial: Vec<f64>,
}

impl SystemState {
    /// State at frame `t` with velocities `(x^{t−k} − x^{t−k−1})/dt` for `k < history`.
    pub fn from_trajectory(traj: &Trajectory, t: usize, history: usize) -> Result<Self> {
        if history == 0 {
            return Err(GpeError::Config("velocity history must be >= 1".into()));
        }
        if t < history || t >= traj.num_frames() {
            return Err(GpeError::Input(format!(
                "frame {t} cannot seed a state with {history} velocities ({} frames available)",
                traj.num_frames()
            )));
        }
        let d = traj.dim;
        let n = traj.num_nodes();
        let origin = traj.frame(t)[..d].to_vec();
        let local = |s: usize| -> Vec<f64> {
            traj.frame(s).iter().enumerate().map(|(k, x)| x - origin[k % d]).collect()
        };
        let positions = local(t);
        let mut velocities = vec![0.0; n * history * d];
        let inv_dt = 1.0 / traj.dt;
        let mut newer = positions.clone();
        for k in 0..history {
            let older = local(t - k - 1);
            for i in 0..n {
                for c in 0..d {
                    velocities[(i * history + k) * d + c] = (newer[i * d + c] - older[i * d + c]) * inv_dt;
                }
            }
            newer = older;
        }
        Ok(SystemState {
            dim: d,
            history,
            kinds: traj.kinds.clone(),
            origin,
            positions,
            velocities,
            initial: traj.frame(t).to_vec(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.kinds.len()
    }

    /// Most recent velocity of node `i`.
    pub fn velocity(&self, i: usize) -> &[f64] {
        let w = self.history * self.dim;
        &self.velocities[i * w..i * w + self.dim]
    }

    pub fn absolute_positions(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = Vec::with_capacity(self.positions.len());
        for (i, kind) in self.kinds.iter().enumerate() {
            if kind.is_boundary() {
                out.extend_from_slice(&self.initial[i * d..(i + 1) * d]);
            } else {
                out.extend(self.positions[i * d..(i + 1) * d].iter().zip(&self.origin).map(|(x, o)| x + o));
            }
        }
        out
    }

    /// Semi-implicit Euler update with per-node accelerations (`n × dim`):
    /// `v ← v + a·dt`, `x ← x + v·dt`, history shifted. Boundary nodes stay put.
    pub fn advance(&mut self, accel: &[f64], dt: f64) -> Result<()> {
        let (n, d, c) = (self.num_nodes(), self.dim, self.history);
        if accel.len() != n * d {
            return Err(GpeError::dim("accelerations", n * d, accel.len()));
        }
        for i in 0..n {
            if !self.kinds[i].is_material() {
                continue;
            }
            let hist = &mut self.velocities[i * c * d..(i + 1) * c * d];
            let last: Vec<f64> = hist[..d].to_vec();
            hist.copy_within(0..(c - 1) * d, d);
            for k in 0..d {
                let v = last[k] + accel[i * d + k] * dt;
                hist[k] = v;
                self.positions[i * d + k] += v * dt;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().chain(&self.velocities).all(|v| v.is_finite())
    }
}

/// Builds the graph the engine consumes for a given state.
#[derive(Clone, Debug)]
pub enum GraphBuilder {
    /// Radius graph rebuilt from every state.
    Particles { cutoff: f64 },
    /// Static multi-scale grid; only virtual nodes and contact edges are refreshed.
    Mesh { template: SystemGraph, cutoff: f64 },
}

impl GraphBuilder {
    pub fn for_trajectory(traj: &Trajectory, history: usize, cutoff: f64) -> Result<Self> {
        match traj.mesh()? {
            None => Ok(GraphBuilder::Particles { cutoff }),
            Some(mesh) => {
                let template = build_multiscale_grid(&mesh, traj.frame(0), &traj.kinds, history)?;
                Ok(GraphBuilder::Mesh { template, cutoff })
            }
        }
    }

    pub fn build(&self, state: &SystemState) -> Result<SystemGraph> {
        let n = state.num_nodes();
        match self {
            GraphBuilder::Particles { cutoff } => {
                let mut g = particle_graph(state.dim, state.history, state.kinds.clone(), state.positions.clone(), *cutoff)?;
                g.velocity_history.copy_from_slice(&state.velocities);
                Ok(g)
            }
            GraphBuilder::Mesh { template, cutoff } => {
                let real = template.hierarchy.as_ref().map(|h| h.real_nodes).unwrap_or(0);
                if real != n || template.kinds[..n] != state.kinds[..] {
                    return Err(GpeError::Input("state nodes do not match the mesh graph".into()));
                }
                let mut g = template.clone();
                g.positions[..n * state.dim].copy_from_slice(&state.positions);
                g.velocity_history[..state.velocities.len()].copy_from_slice(&state.velocities);
                g.refresh_virtual_nodes();
                g.refresh_contacts(*cutoff)?;
                Ok(g)
            }
        }
    }
}
