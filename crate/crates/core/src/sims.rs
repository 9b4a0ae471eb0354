//! Ground-truth generators: a damped soft-particle blob and a mass-spring sheet.
//!
//! Both systems use only pairwise forces that are equal and opposite, plus
//! gravity and wall contact, and integrate with semi-implicit Euler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GpeError, Result};
use crate::graph::{MeshTopology, NodeKind};
use crate::trajectory::{SystemKind, Trajectory};

/// Viscosity-like damping range of the blob.
pub const BLOB_PARAM_RANGE: (f64, f64) = (0.1, 2.0);
/// Spring stiffness range of the sheet.
pub const SHEET_PARAM_RANGE: (f64, f64) = (20.0, 400.0);

/// Blob particle interaction radius.
pub const BLOB_RADIUS: f64 = 0.05;
/// Blob repulsion stiffness (force at zero separation).
pub const BLOB_STIFFNESS: f64 = 60.0;
/// Damping force per unit damping parameter and unit relative normal speed.
pub const BLOB_DAMPING: f64 = 0.6;
pub const BLOB_SPACING: f64 = 0.032;
pub const BLOB_MASS: f64 = 0.02;

pub const SHEET_MASS: f64 = 0.02;
pub const SHEET_DAMPING: f64 = 0.2;
/// Floor penalty stiffness and damping per unit mass (1/s², 1/s).
pub const FLOOR_STIFFNESS: f64 = 1.0e4;
pub const FLOOR_DAMPING: f64 = 100.0;
pub const SHEET_WIDTH: f64 = 0.3;

pub fn param_range(system: SystemKind) -> (f64, f64) {
    match system {
        SystemKind::ViscousBlob => BLOB_PARAM_RANGE,
        SystemKind::ElasticSheet => SHEET_PARAM_RANGE,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub system: SystemKind,
    /// Damping γ (blob) or stiffness k (sheet).
    pub param: f64,
    pub n_particles: usize,
    pub grid_dims: [usize; 2],
    pub dt: f64,
    /// Number of output frames `T`.
    pub frames: usize,
    /// Integration sub-steps per output frame.
    pub substeps: usize,
    pub seed: u64,
    /// Walls/floor span `[0, box_size]` per axis.
    pub box_size: f64,
    /// Downward gravitational acceleration.
    pub gravity: f64,
    pub walls: bool,
    /// Scale of random initial velocities.
    pub init_speed: f64,
    /// Spacing of boundary nodes along walls and floor.
    pub boundary_spacing: f64,
}

impl SimSpec {
    pub fn viscous_blob(param: f64, seed: u64) -> Self {
        SimSpec {
            system: SystemKind::ViscousBlob,
            param,
            n_particles: 150,
            grid_dims: [0, 0],
            dt: 2.5e-3,
            frames: 400,
            substeps: 2,
            seed,
            box_size: 1.0,
            gravity: 9.81,
            walls: true,
            init_speed: 0.5,
            boundary_spacing: 0.025,
        }
    }

    pub fn elastic_sheet(param: f64, seed: u64) -> Self {
        SimSpec {
            system: SystemKind::ElasticSheet,
            param,
            n_particles: 0,
            grid_dims: [4, 4],
            dt: 2.5e-3,
            frames: 400,
            substeps: 2,
            seed,
            box_size: 1.0,
            gravity: 9.81,
            walls: true,
            init_speed: 0.3,
            boundary_spacing: 0.025,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(GpeError::Input(format!("dt must be positive, got {}", self.dt)));
        }
        if self.frames < 3 {
            return Err(GpeError::Input(format!("need at least 3 frames, got {}", self.frames)));
        }
        if self.substeps == 0 {
            return Err(GpeError::Input("substeps must be >= 1".into()));
        }
        if !self.param.is_finite() || self.param <= 0.0 {
            return Err(GpeError::Input(format!("material parameter must be positive, got {}", self.param)));
        }
        if !(self.box_size > 0.0) {
            return Err(GpeError::Input("box_size must be positive".into()));
        }
        match self.system {
            SystemKind::ViscousBlob if self.n_particles == 0 => {
                Err(GpeError::Input("viscous_blob needs n_particles >= 1".into()))
            }
            SystemKind::ElasticSheet => MeshTopology::grid(self.grid_dims[0], self.grid_dims[1]).map(|_| ()),
            _ => Ok(()),
        }
    }
}

/// Node masses, positions, velocities and pairwise springs in 2-D.
#[derive(Clone, Debug)]
pub struct MassSpringSystem {
    pub mass: f64,
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    /// `(i, j, rest_length)`.
    pub springs: Vec<(usize, usize, f64)>,
    pub stiffness: f64,
    pub damping: f64,
    pub gravity: f64,
    /// Floor height, when present. Contact is a stiff damped penalty force.
    pub floor: Option<f64>,
}

impl MassSpringSystem {
    /// Forces from springs, dashpots, gravity and floor contact.
    pub fn forces(&self) -> Vec<[f64; 2]> {
        let mut f = vec![[0.0, -self.mass * self.gravity]; self.positions.len()];
        if let Some(floor) = self.floor {
            for ((fi, x), v) in f.iter_mut().zip(&self.positions).zip(&self.velocities) {
                let depth = floor - x[1];
                if depth > 0.0 {
                    fi[1] += self.mass * (FLOOR_STIFFNESS * depth - FLOOR_DAMPING * v[1]).max(0.0);
                }
            }
        }
        for &(i, j, rest) in &self.springs {
            let (pi, pj) = (self.positions[i], self.positions[j]);
            let d = [pj[0] - pi[0], pj[1] - pi[1]];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if len == 0.0 {
                continue;
            }
            let u = [d[0] / len, d[1] / len];
            let (vi, vj) = (self.velocities[i], self.velocities[j]);
            let rel = (vj[0] - vi[0]) * u[0] + (vj[1] - vi[1]) * u[1];
            let mag = self.stiffness * (len - rest) + self.damping * rel;
            let fij = [mag * u[0], mag * u[1]];
            f[i][0] += fij[0];
            f[i][1] += fij[1];
            f[j][0] -= fij[0];
            f[j][1] -= fij[1];
        }
        f
    }

    /// Semi-implicit Euler step.
    pub fn step(&mut self, dt: f64) {
        let f = self.forces();
        let inv_m = 1.0 / self.mass;
        for ((x, v), fi) in self.positions.iter_mut().zip(self.velocities.iter_mut()).zip(&f) {
            v[0] += fi[0] * inv_m * dt;
            v[1] += fi[1] * inv_m * dt;
            x[0] += v[0] * dt;
            x[1] += v[1] * dt;
        }
    }

    pub fn momentum(&self) -> [f64; 2] {
        let mut p = [0.0; 2];
        for v in &self.velocities {
            p[0] += self.mass * v[0];
            p[1] += self.mass * v[1];
        }
        p
    }
}

/// Particles repelling within [`BLOB_RADIUS`] with damping scaled by γ.
#[derive(Clone, Debug)]
pub struct BlobSystem {
    pub gamma: f64,
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    pub gravity: f64,
    /// Box extent when walls are active.
    pub walls: Option<f64>,
}

impl BlobSystem {
    pub fn forces(&self) -> Vec<[f64; 2]> {
        let n = self.positions.len();
        let mut f = vec![[0.0, -BLOB_MASS * self.gravity]; n];
        let h = BLOB_RADIUS;
        for i in 0..n {
            for j in i + 1..n {
                let (pi, pj) = (self.positions[i], self.positions[j]);
                let d = [pi[0] - pj[0], pi[1] - pj[1]];
                let r2 = d[0] * d[0] + d[1] * d[1];
                if r2 >= h * h || r2 == 0.0 {
                    continue;
                }
                let r = r2.sqrt();
                let u = [d[0] / r, d[1] / r];
                let w = 1.0 - r / h;
                let (vi, vj) = (self.velocities[i], self.velocities[j]);
                let rel = (vi[0] - vj[0]) * u[0] + (vi[1] - vj[1]) * u[1];
                let mag = BLOB_STIFFNESS * w * w - self.gamma * BLOB_DAMPING * w * rel;
                f[i][0] += mag * u[0];
                f[i][1] += mag * u[1];
                f[j][0] -= mag * u[0];
                f[j][1] -= mag * u[1];
            }
        }
        f
    }

    pub fn step(&mut self, dt: f64) {
        let f = self.forces();
        let inv_m = 1.0 / BLOB_MASS;
        for ((x, v), fi) in self.positions.iter_mut().zip(self.velocities.iter_mut()).zip(&f) {
            v[0] += fi[0] * inv_m * dt;
            v[1] += fi[1] * inv_m * dt;
            x[0] += v[0] * dt;
            x[1] += v[1] * dt;
            if let Some(size) = self.walls {
                for k in 0..2 {
                    if x[k] < 0.0 {
                        x[k] = 0.0;
                        v[k] = v[k].max(0.0);
                    } else if x[k] > size {
                        x[k] = size;
                        v[k] = v[k].min(0.0);
                    }
                }
            }
        }
    }

    pub fn momentum(&self) -> [f64; 2] {
        let mut p = [0.0; 2];
        for v in &self.velocities {
            p[0] += BLOB_MASS * v[0];
            p[1] += BLOB_MASS * v[1];
        }
        p
    }
}

fn check_bounds(positions: &[[f64; 2]], limit: f64, step: usize) -> Result<()> {
    for (i, p) in positions.iter().enumerate() {
        if !p[0].is_finite() || !p[1].is_finite() || p[0].abs() > limit || p[1].abs() > limit {
            return Err(GpeError::Instability {
                step,
                detail: format!("node {i} left the domain at ({}, {})", p[0], p[1]),
            });
        }
    }
    Ok(())
}

fn boundary_line(from: [f64; 2], to: [f64; 2], spacing: f64) -> Vec<[f64; 2]> {
    let len = ((to[0] - from[0]).powi(2) + (to[1] - from[1]).powi(2)).sqrt();
    let n = (len / spacing).round().max(1.0) as usize;
    (0..=n)
        .map(|k| {
            let s = k as f64 / n as f64;
            [from[0] + s * (to[0] - from[0]), from[1] + s * (to[1] - from[1])]
        })
        .collect()
}

fn record(frames: &mut Vec<f64>, moving: &[[f64; 2]], fixed: &[[f64; 2]]) {
    for p in moving.iter().chain(fixed) {
        frames.extend_from_slice(p);
    }
}

/// Initial blob: a jittered square-ish lattice at a random location with a random common velocity.
fn blob_initial(spec: &SimSpec, rng: &mut ChaCha8Rng) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let n = spec.n_particles;
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let s = BLOB_SPACING;
    let width = (cols - 1) as f64 * s;
    let height = (rows - 1) as f64 * s;
    let margin = 0.1 * spec.box_size;
    let x0 = rng.random_range(margin..(spec.box_size - margin - width).max(margin + 1e-9));
    let y0 = rng.random_range(0.3 * spec.box_size..(0.55 * spec.box_size).max(0.3 * spec.box_size + 1e-9));
    let _ = height;
    let common = [
        rng.random_range(-1.0..1.0) * spec.init_speed,
        rng.random_range(-1.0..0.0) * spec.init_speed,
    ];
    let mut pos = Vec::with_capacity(n);
    let mut vel = Vec::with_capacity(n);
    for k in 0..n {
        let (c, r) = (k % cols, k / cols);
        let jitter = 0.15 * s;
        pos.push([
            x0 + c as f64 * s + rng.random_range(-jitter..jitter),
            y0 + r as f64 * s + rng.random_range(-jitter..jitter),
        ]);
        vel.push([
            common[0] + 0.1 * spec.init_speed * rng.random_range(-1.0..1.0),
            common[1] + 0.1 * spec.init_speed * rng.random_range(-1.0..1.0),
        ]);
    }
    (pos, vel)
}

pub fn simulate_viscous_blob(spec: &SimSpec) -> Result<Trajectory> {
    if spec.system != SystemKind::ViscousBlob {
        return Err(GpeError::Contract(format!("simulate_viscous_blob called with {}", spec.system.as_str())));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (positions, velocities) = blob_initial(spec, &mut rng);
    let mut sys = BlobSystem {
        gamma: spec.param,
        positions,
        velocities,
        gravity: spec.gravity,
        walls: spec.walls.then_some(spec.box_size),
    };
    let boundary = if spec.walls {
        let b = spec.box_size;
        let wall_top = 0.7 * b;
        let mut pts = boundary_line([0.0, 0.0], [b, 0.0], spec.boundary_spacing);
        pts.extend(boundary_line([0.0, spec.boundary_spacing], [0.0, wall_top], spec.boundary_spacing));
        pts.extend(boundary_line([b, spec.boundary_spacing], [b, wall_top], spec.boundary_spacing));
        pts
    } else {
        Vec::new()
    };
    let mut kinds = vec![NodeKind::material(0, spec.param); spec.n_particles];
    kinds.extend(std::iter::repeat(NodeKind::Boundary).take(boundary.len()));

    let sub_dt = spec.dt / spec.substeps as f64;
    let limit = 10.0 * spec.box_size;
    let mut frames = Vec::with_capacity(spec.frames * kinds.len() * 2);
    record(&mut frames, &sys.positions, &boundary);
    for t in 1..spec.frames {
        for _ in 0..spec.substeps {
            sys.step(sub_dt);
        }
        check_bounds(&sys.positions, limit, t)?;
        record(&mut frames, &sys.positions, &boundary);
    }
    Ok(Trajectory {
        dim: 2,
        dt: spec.dt,
        param: spec.param,
        param_range: BLOB_PARAM_RANGE,
        system: Some(SystemKind::ViscousBlob),
        gravity: vec![0.0, -spec.gravity],
        grid_dims: None,
        kinds,
        frames,
    })
}

/// Structural and diagonal springs of a quad mesh, deduplicated, with rest lengths from `positions`.
pub fn sheet_springs(mesh: &MeshTopology, positions: &[[f64; 2]]) -> Vec<(usize, usize, f64)> {
    let mut set = std::collections::BTreeSet::new();
    for c in &mesh.cells {
        let c = c.map(|v| v as usize);
        for (a, b) in [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (1, 3)] {
            let (i, j) = (c[a].min(c[b]), c[a].max(c[b]));
            set.insert((i, j));
        }
    }
    set.into_iter()
        .map(|(i, j)| {
            let d = [positions[j][0] - positions[i][0], positions[j][1] - positions[i][1]];
            (i, j, (d[0] * d[0] + d[1] * d[1]).sqrt())
        })
        .collect()
}

pub fn simulate_elastic_sheet(spec: &SimSpec) -> Result<Trajectory> {
    if spec.system != SystemKind::ElasticSheet {
        return Err(GpeError::Contract(format!("simulate_elastic_sheet called with {}", spec.system.as_str())));
    }
    spec.validate()?;
    let mesh = MeshTopology::grid(spec.grid_dims[0], spec.grid_dims[1])?;
    let [nx, ny] = spec.grid_dims;
    let cell = SHEET_WIDTH / nx.max(ny) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = nx as f64 * cell;
    let x0 = rng.random_range(0.2 * spec.box_size..(0.8 * spec.box_size - width).max(0.2 * spec.box_size + 1e-9));
    let y0 = rng.random_range(0.15 * spec.box_size..0.3 * spec.box_size);
    let angle: f64 = rng.random_range(-0.3..0.3);
    let (sa, ca) = angle.sin_cos();
    let (cx, cy) = (x0 + 0.5 * width, y0 + 0.5 * ny as f64 * cell);
    let mut positions = Vec::with_capacity(mesh.n_vertices);
    for iy in 0..=ny {
        for ix in 0..=nx {
            let (px, py) = (x0 + ix as f64 * cell - cx, y0 + iy as f64 * cell - cy);
            positions.push([cx + ca * px - sa * py, cy + sa * px + ca * py]);
        }
    }
    let v0 = [
        rng.random_range(-1.0..1.0) * spec.init_speed,
        rng.random_range(-1.0..0.0) * spec.init_speed,
    ];
    let springs = sheet_springs(&mesh, &positions);
    let mut sys = MassSpringSystem {
        mass: SHEET_MASS,
        velocities: vec![v0; positions.len()],
        positions,
        springs,
        stiffness: spec.param,
        damping: SHEET_DAMPING,
        gravity: spec.gravity,
        floor: spec.walls.then_some(0.0),
    };
    let boundary = if spec.walls {
        boundary_line([0.0, 0.0], [spec.box_size, 0.0], spec.boundary_spacing)
    } else {
        Vec::new()
    };
    let mut kinds = vec![NodeKind::material(0, spec.param); mesh.n_vertices];
    kinds.extend(std::iter::repeat(NodeKind::Boundary).take(boundary.len()));

    let sub_dt = spec.dt / spec.substeps as f64;
    let limit = 10.0 * spec.box_size;
    let mut frames = Vec::with_capacity(spec.frames * kinds.len() * 2);
    record(&mut frames, &sys.positions, &boundary);
    for t in 1..spec.frames {
        for _ in 0..spec.substeps {
            sys.step(sub_dt);
        }
        check_bounds(&sys.positions, limit, t)?;
        record(&mut frames, &sys.positions, &boundary);
    }
    Ok(Trajectory {
        dim: 2,
        dt: spec.dt,
        param: spec.param,
        param_range: SHEET_PARAM_RANGE,
        system: Some(SystemKind::ElasticSheet),
        gravity: vec![0.0, -spec.gravity],
        grid_dims: Some(spec.grid_dims),
        kinds,
        frames,
    })
}

pub fn simulate(spec: &SimSpec) -> Result<Trajectory> {
    match spec.system {
        SystemKind::ViscousBlob => simulate_viscous_blob(spec),
        SystemKind::ElasticSheet => simulate_elastic_sheet(spec),
    }
}
