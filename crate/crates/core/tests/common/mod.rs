#![allow(dead_code)]

use std::path::{Path, PathBuf};

use gpe::dataset::{generate_dataset, DatasetPlan};
use gpe::engine::{Engine, EngineConfig, MessageTrace, NormStats};
use gpe::graph::{particle_graph, squared_distance, NodeKind, SystemGraph};
use gpe::params::{ParameterStore, Role};
use gpe::sims::SimSpec;
use gpe::tape::Tape;
use gpe::tensor::Tensor;
use gpe::training::TrainConfig;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Grid step for positions: sums with [`dyadic_offset`] stay exact in `f64`.
pub const GRID: f64 = 1.0 / (1u64 << 20) as f64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dyadic_offset<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-64i64..64) as f64 / 16.0).collect()
}

pub fn random_kind<R: Rng>(rng: &mut R) -> NodeKind {
    match rng.random_range(0..10) {
        0 | 1 => NodeKind::Boundary,
        2..=5 => NodeKind::material(0, rng.random_range(0..64) as f64 / 64.0),
        _ => NodeKind::material(1, rng.random_range(0..64) as f64 / 64.0),
    }
}

/// Random typed particle graph in the unit box with distinct dyadic positions,
/// random velocity histories and a cutoff giving roughly `degree` neighbours.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, dim: usize, history: usize, degree: f64) -> SystemGraph {
    let kinds: Vec<NodeKind> = (0..n).map(|_| random_kind(rng)).collect();
    let mut positions = Vec::with_capacity(n * dim);
    let mut seen = std::collections::HashSet::new();
    while positions.len() < n * dim {
        let p: Vec<i64> = (0..dim).map(|_| rng.random_range(0..1i64 << 20)).collect();
        if seen.insert(p.clone()) {
            positions.extend(p.iter().map(|&v| v as f64 * GRID));
        }
    }
    let volume = if dim == 2 { std::f64::consts::PI } else { 4.0 / 3.0 * std::f64::consts::PI };
    let r = (degree / (volume * n as f64)).powf(1.0 / dim as f64);
    let mut g = particle_graph(dim, history, kinds, positions, r).unwrap();
    for v in g.velocity_history.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    g
}

pub fn engine_config(dim: usize, hidden: usize, rounds: usize, history: usize, conserve: bool) -> EngineConfig {
    EngineConfig {
        rounds,
        hidden_dim: hidden,
        history,
        dim,
        node_types: vec!["boundary".into(), "m0".into(), "m1".into()],
        cutoff: 0.1,
        length_scale: 0.1,
        param_range: (0.0, 1.0),
        conserve_momentum: conserve,
        ..EngineConfig::default()
    }
}

pub fn engine_with_params(cfg: EngineConfig, seed: u64) -> (Engine, ParameterStore) {
    let params = cfg.init_params(&mut rng(seed)).unwrap();
    (Engine::new(cfg).unwrap(), params)
}

pub fn stats(dim: usize) -> NormStats {
    NormStats {
        velocity_scale: 0.5,
        accel_mean: vec![0.25; dim],
        accel_std: vec![2.0; dim],
    }
}

pub fn gravity(dim: usize) -> Vec<f64> {
    let mut g = vec![0.0; dim];
    g[1] = -9.81;
    g
}

/// All `(i, j)`, `i < j`, closer than `r`, skipping boundary–boundary pairs.
pub fn brute_force_pairs(positions: &[f64], kinds: &[NodeKind], dim: usize, r: f64) -> Vec<(u32, u32)> {
    let n = kinds.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if kinds[i].is_boundary() && kinds[j].is_boundary() {
                continue;
            }
            if squared_distance(&positions[i * dim..(i + 1) * dim], &positions[j * dim..(j + 1) * dim]) < r * r {
                out.push((i as u32, j as u32));
            }
        }
    }
    out
}

pub fn pair_list(g: &SystemGraph) -> Vec<(u32, u32)> {
    g.pairs.iter().map(|p| (p.i, p.j)).collect()
}

/// Small blob dataset: two train parameters, one unseen, one test trajectory each.
pub fn blob_dataset(dir: &Path, particles: usize, frames: usize) -> PathBuf {
    let mut spec = SimSpec::viscous_blob(1.0, 40);
    spec.n_particles = particles;
    spec.frames = frames;
    let plan = DatasetPlan {
        train_params: vec![0.4, 1.6],
        unseen_params: vec![1.0],
        per_param: 2,
        test_per_param: 1,
    };
    generate_dataset(&spec, &plan, dir).unwrap().0
}

pub fn small_train_config(manifest: PathBuf, steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch: 2,
        noise_sigma: 3e-3,
        lr_start: 3e-3,
        lr_end: 3e-4,
        seed: 7,
        val_every: 25,
        val_samples: 4,
        manifest,
        engine: EngineConfig {
            rounds: 2,
            hidden_dim: 16,
            cutoff: 0.06,
            length_scale: 0.05,
            ..EngineConfig::default()
        },
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn assert_translation_invariant(seed: u64, dim: usize, conserve: bool) {
    let mut r = rng(seed);
    let n = r.random_range(2..80);
    let g = random_graph(&mut r, n, dim, 2, 6.0);
    let (engine, params) = engine_with_params(engine_config(dim, 8, 2, 2, conserve), seed);
    let base = engine.forward(&g, &params, &stats(dim), &gravity(dim)).unwrap();
    let mut moved = g.clone();
    moved.translate(&dyadic_offset(&mut r, dim));
    let out = engine.forward(&moved, &params, &stats(dim), &gravity(dim)).unwrap();
    assert_eq!(base, out);
}

pub fn assert_permutation_equivariant(seed: u64, dim: usize, conserve: bool) {
    let mut r = rng(seed);
    let n = r.random_range(2..80);
    let g = random_graph(&mut r, n, dim, 2, 6.0);
    let (engine, params) = engine_with_params(engine_config(dim, 8, 2, 2, conserve), seed);
    let base = engine.forward(&g, &params, &stats(dim), &gravity(dim)).unwrap();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut r);
    let pg = g.permuted(&perm).unwrap();
    let out = engine.forward(&pg, &params, &stats(dim), &gravity(dim)).unwrap();
    assert_eq!(out.message_evals, base.message_evals);
    let row_of = |nodes: &[usize], i: usize| nodes.iter().position(|&k| k == i).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        if !g.kinds[old].is_material() {
            continue;
        }
        let a = row_of(&base.nodes, old);
        let b = row_of(&out.nodes, new);
        assert_eq!(base.accel[a * dim..(a + 1) * dim], out.accel[b * dim..(b + 1) * dim], "node {old}");
    }
}

fn loss_of(engine: &Engine, params: &ParameterStore, g: &SystemGraph, target: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let out = engine
        .forward_taped(g, params, &NormStats::identity(2), &[0.0, -1.0], &mut tape, None)
        .unwrap();
    let loss = tape.mse(out.accel, Tensor::vector(target.to_vec())).unwrap();
    tape.value(loss).data()[0]
}

/// Relative error of central finite differences against the taped gradient, per role.
pub fn gradient_check(conserve: bool) -> Vec<(Role, usize, f64)> {
    let mut cfg = engine_config(2, 8, 2, 2, conserve);
    cfg.node_types = vec!["boundary".into(), "m0".into()];
    let (engine, mut params) = engine_with_params(cfg, 17);
    for (_, e) in params.iter_mut() {
        for v in e.value.data_mut().iter_mut() {
            *v += 0.05;
        }
    }
    let kinds = vec![
        NodeKind::material(0, 0.3),
        NodeKind::material(0, 0.7),
        NodeKind::material(0, 0.5),
        NodeKind::Boundary,
        NodeKind::Boundary,
    ];
    let positions = vec![0.0, 0.0, 0.06, 0.01, 0.02, 0.07, 0.0, -0.05, 0.07, -0.04];
    let mut g = particle_graph(2, 2, kinds, positions, 0.1).unwrap();
    let mut r = rng(9);
    for v in g.velocity_history.iter_mut() {
        *v = r.random_range(-1.0..1.0);
    }
    let target: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();

    params.zero_grad();
    let mut tape = Tape::new();
    let out = engine
        .forward_taped(&g, &params, &NormStats::identity(2), &[0.0, -1.0], &mut tape, None)
        .unwrap();
    let loss = tape.mse(out.accel, Tensor::vector(target.clone())).unwrap();
    tape.backward(loss, &mut params).unwrap();

    let keys: Vec<_> = params.keys().cloned().collect();
    let mut worst: Vec<(Role, usize, f64)> = Vec::new();
    let h = 1e-6;
    for key in keys {
        let analytic = params.get(&key).unwrap().grad.data().to_vec();
        let len = analytic.len();
        let mut checked = 0;
        let mut max_err: f64 = 0.0;
        for k in 0..len {
            let orig = params.get(&key).unwrap().value.data()[k];
            params.get_mut(&key).unwrap().value.data_mut()[k] = orig + h;
            let up = loss_of(&engine, &params, &g, &target);
            params.get_mut(&key).unwrap().value.data_mut()[k] = orig - h;
            let down = loss_of(&engine, &params, &g, &target);
            params.get_mut(&key).unwrap().value.data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic[k];
            let scale = fd.abs().max(a.abs());
            if scale < 1e-7 {
                continue;
            }
            checked += 1;
            max_err = max_err.max((fd - a).abs() / scale);
        }
        let role = key.func.role;
        match worst.iter_mut().find(|w| w.0 == role) {
            Some(w) => {
                w.1 += checked;
                w.2 = w.2.max(max_err);
            }
            None => worst.push((role, checked, max_err)),
        }
    }
    worst
}

pub fn trace_of(engine: &Engine, params: &ParameterStore, g: &SystemGraph) -> MessageTrace {
    let mut trace = MessageTrace::default();
    engine
        .forward_traced(g, params, &stats(g.dim), &gravity(g.dim), Some(&mut trace))
        .unwrap();
    trace
}

/// Counts `(nodes, virtual nodes, mesh, virtual, lateral)` of the multi-scale graph over an `n × n` grid.
pub fn multiscale_closed_form(n: usize) -> (usize, usize, usize, usize, usize) {
    let vertices = (n + 1) * (n + 1);
    let mesh = 2 * n * (n + 1) + 2 * n * n;
    if n == 1 {
        return (vertices + 1, 1, mesh, 4, 0);
    }
    let levels = n.trailing_zeros() as usize;
    let (mut virt, mut vlinks, mut lateral) = (0, 0, 0);
    for k in 1..=levels {
        let m = n >> k;
        virt += m * m;
        vlinks += if k == 1 { 9 } else { 4 } * m * m;
        lateral += 2 * m * (m - 1);
    }
    (vertices + virt, virt, mesh, vlinks, lateral)
}

/// The same counts measured on a built graph.
pub fn multiscale_measured(n: usize) -> (usize, usize, usize, usize, usize) {
    use gpe::graph::{build_multiscale_grid, EdgeClass, MeshTopology};
    let mesh = MeshTopology::grid(n, n).unwrap();
    let positions: Vec<f64> = (0..(n + 1) * (n + 1))
        .flat_map(|v| [(v % (n + 1)) as f64, (v / (n + 1)) as f64])
        .collect();
    let kinds = vec![NodeKind::material(0, 1.0); (n + 1) * (n + 1)];
    let g = build_multiscale_grid(&mesh, &positions, &kinds, 1).unwrap();
    let count = |c: EdgeClass| g.pairs.iter().filter(|p| p.class == c).count();
    (
        g.num_nodes(),
        g.kinds.iter().filter(|k| k.is_virtual()).count(),
        count(EdgeClass::Mesh),
        count(EdgeClass::Virtual),
        count(EdgeClass::Lateral),
    )
}

/// Random positions (some clustered, some duplicated) and kinds for radius-graph checks.
pub fn radius_case<R: Rng>(rng: &mut R) -> (Vec<f64>, Vec<NodeKind>, usize, f64) {
    let dim = rng.random_range(2..4);
    let n = rng.random_range(0..250);
    let scale = [0.01, 1.0, 100.0][rng.random_range(0..3)];
    let mut positions: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
    if n > 4 {
        let src = rng.random_range(0..n);
        let dst = rng.random_range(0..n);
        let p: Vec<f64> = positions[src * dim..(src + 1) * dim].to_vec();
        positions[dst * dim..(dst + 1) * dim].copy_from_slice(&p);
    }
    let kinds = (0..n).map(|_| random_kind(rng)).collect();
    let r = scale * rng.random_range(0.01..0.6);
    (positions, kinds, dim, r)
}
