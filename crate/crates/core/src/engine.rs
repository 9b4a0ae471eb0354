//! The message-passing network: typed encoders, `L` rounds of antisymmetric
//! message passing with residual updates, and per-type acceleration decoders.
//!
//! Each stored pair is evaluated once per round. The pair is oriented by the
//! graph's canonical ranks (`src` = lower rank); `src` aggregates `+m` and
//! `dst` aggregates `−m`. With `conserve_momentum = false` both directions get
//! their own edge state and message evaluation instead.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{GpeError, Result};
use crate::graph::{node_feature_vector, oriented_edge_feature, FeatureSpec, SystemGraph, BOUNDARY_TAG};
use crate::mlp::Mlp;
use crate::params::{FnKey, ParameterStore, Role};
use crate::tape::{ScatterEntry, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Message-passing rounds `L`.
    pub rounds: usize,
    pub hidden_dim: usize,
    /// Linear layers per MLP.
    pub mlp_layers: usize,
    /// Node type tags, e.g. `["boundary", "m0"]`.
    pub node_types: Vec<String>,
    /// Velocity history length `C`.
    pub history: usize,
    pub dim: usize,
    /// Radius-graph cutoff.
    pub cutoff: f64,
    /// Edge displacements are divided by this before encoding.
    pub length_scale: f64,
    /// Material parameter range mapped onto `[0, 1]`.
    pub param_range: (f64, f64),
    pub conserve_momentum: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            rounds: 12,
            hidden_dim: 128,
            mlp_layers: 2,
            node_types: vec![BOUNDARY_TAG.to_string(), "m0".to_string()],
            history: 3,
            dim: 2,
            cutoff: 0.4,
            length_scale: 1.0,
            param_range: (0.0, 1.0),
            conserve_momentum: true,
        }
    }
}

impl EngineConfig {
    /// Desk-scale defaults: 6 rounds, 64 hidden units.
    pub fn desk() -> Self {
        EngineConfig {
            rounds: 6,
            hidden_dim: 64,
            ..EngineConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(GpeError::Config("rounds must be >= 1".into()));
        }
        if self.hidden_dim == 0 || self.mlp_layers == 0 {
            return Err(GpeError::Config("hidden_dim and mlp_layers must be >= 1".into()));
        }
        if self.dim != 2 && self.dim != 3 {
            return Err(GpeError::Config(format!("dim must be 2 or 3, got {}", self.dim)));
        }
        if self.node_types.is_empty() {
            return Err(GpeError::Config("node_types is empty".into()));
        }
        if !(self.length_scale > 0.0) || !(self.cutoff > 0.0) {
            return Err(GpeError::Config("cutoff and length_scale must be positive".into()));
        }
        let mut seen = self.node_types.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.node_types.len() {
            return Err(GpeError::Config("node_types contains duplicates".into()));
        }
        Ok(())
    }

    pub fn material_types(&self) -> Vec<String> {
        self.node_types.iter().filter(|t| t.starts_with('m')).cloned().collect()
    }

    /// Order-normalized type pairs, excluding boundary–boundary.
    pub fn edge_types(&self) -> Vec<String> {
        let mut tags = self.node_types.clone();
        tags.sort();
        let mut out = Vec::new();
        for (a, x) in tags.iter().enumerate() {
            for y in &tags[a..] {
                if x == BOUNDARY_TAG && y == BOUNDARY_TAG {
                    continue;
                }
                out.push(format!("{x}+{y}"));
            }
        }
        out
    }

    pub fn node_feature_len(&self) -> usize {
        self.history * self.dim + self.dim + 1 + self.node_types.len()
    }

    pub fn edge_feature_len(&self) -> usize {
        self.dim + 1
    }

    fn dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(std::iter::repeat(self.hidden_dim).take(self.mlp_layers - 1));
        d.push(output);
        d
    }

    pub fn node_encoder(&self, tag: &str) -> Mlp {
        Mlp::new(FnKey::new(Role::NodeEncoder, 0, tag), self.dims(self.node_feature_len(), self.hidden_dim))
    }

    pub fn edge_encoder(&self, tag: &str) -> Mlp {
        Mlp::new(FnKey::new(Role::EdgeEncoder, 0, tag), self.dims(self.edge_feature_len(), self.hidden_dim))
    }

    pub fn edge_processor(&self, round: usize, tag: &str) -> Mlp {
        Mlp::new(FnKey::new(Role::EdgeProcessor, round, tag), self.dims(3 * self.hidden_dim, self.hidden_dim))
    }

    pub fn node_processor(&self, round: usize, tag: &str) -> Mlp {
        Mlp::new(FnKey::new(Role::NodeProcessor, round, tag), self.dims(self.hidden_dim, self.hidden_dim))
    }

    pub fn decoder(&self, tag: &str) -> Mlp {
        Mlp::new(FnKey::new(Role::NodeDecoder, 0, tag), self.dims(self.hidden_dim, self.dim))
    }

    /// Every learnable function implied by the type set, in a fixed order.
    pub fn all_mlps(&self) -> Vec<Mlp> {
        let mut out = Vec::new();
        for t in &self.node_types {
            out.push(self.node_encoder(t));
        }
        for t in &self.edge_types() {
            out.push(self.edge_encoder(t));
        }
        for l in 1..=self.rounds {
            for t in &self.edge_types() {
                out.push(self.edge_processor(l, t));
            }
            for t in &self.node_types {
                out.push(self.node_processor(l, t));
            }
        }
        for t in &self.material_types() {
            out.push(self.decoder(t));
        }
        out
    }

    pub fn init_params<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<ParameterStore> {
        self.validate()?;
        let mut store = ParameterStore::new();
        for mlp in self.all_mlps() {
            store.init_mlp(&mlp.func, &mlp.dims, rng)?;
        }
        Ok(store)
    }
}

/// Data-derived scales for features and the standardized acceleration target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub velocity_scale: f64,
    pub accel_mean: Vec<f64>,
    pub accel_std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        NormStats {
            velocity_scale: 1.0,
            accel_mean: vec![0.0; dim],
            accel_std: vec![1.0; dim],
        }
    }

    pub fn force_scale(&self) -> f64 {
        self.accel_std.iter().sum::<f64>() / self.accel_std.len().max(1) as f64
    }

    pub fn standardize(&self, accel: &[f64]) -> Vec<f64> {
        let d = self.accel_mean.len();
        accel
            .iter()
            .enumerate()
            .map(|(k, a)| (a - self.accel_mean[k % d]) / self.accel_std[k % d])
            .collect()
    }

    pub fn destandardize(&self, accel: &[f64]) -> Vec<f64> {
        let d = self.accel_mean.len();
        accel
            .iter()
            .enumerate()
            .map(|(k, a)| a * self.accel_std[k % d] + self.accel_mean[k % d])
            .collect()
    }
}

/// Hidden vectors after some round: one row per node and one per stored pair.
#[derive(Clone, Copy, Debug)]
pub struct HiddenState {
    pub node_h: Var,
    pub edge_h: Var,
    /// Reverse-direction edge state, present only without momentum conservation.
    pub edge_h_rev: Option<Var>,
}

/// Directed messages of one round, materialized for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundMessages {
    /// `(src, dst)` per pair in storage order.
    pub oriented: Vec<(usize, usize)>,
    /// `P × H` messages on `src → dst`.
    pub forward: Vec<f64>,
    /// `P × H` messages on `dst → src`.
    pub backward: Vec<f64>,
    /// `N × H` per-node aggregates.
    pub aggregates: Vec<f64>,
}

impl RoundMessages {
    /// Component-wise sum of all `2P` directed messages.
    pub fn directed_sum(&self, hidden: usize) -> Vec<f64> {
        let mut s = vec![0.0; hidden];
        for (f, b) in self.forward.chunks(hidden).zip(self.backward.chunks(hidden)) {
            for k in 0..hidden {
                s[k] += f[k] + b[k];
            }
        }
        s
    }
}

/// Per-round message tensors and the message-MLP evaluation counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MessageTrace {
    pub rounds: Vec<RoundMessages>,
}

/// Standardized accelerations for the material nodes of a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Node indices, ascending.
    pub nodes: Vec<usize>,
    /// `nodes.len() × dim`.
    pub accel: Vec<f64>,
    pub message_evals: u64,
}

/// Output of a taped forward pass.
#[derive(Clone, Debug)]
pub struct TapedForward {
    pub nodes: Vec<usize>,
    pub accel: Var,
    pub message_evals: u64,
}

/// Graph-derived indexing shared by all rounds of one forward pass.
struct Layout {
    n: usize,
    /// `(src, dst)` for each stored pair.
    oriented: Vec<(usize, usize)>,
    node_groups: BTreeMap<String, Vec<usize>>,
    edge_groups: BTreeMap<String, Vec<usize>>,
    /// Scatter entries for the conserving (`P` rows) or per-direction (`2P` rows) message matrix.
    entries: Vec<ScatterEntry>,
}

impl Layout {
    fn new(graph: &SystemGraph, conserve: bool) -> Self {
        let ranks = graph.canonical_ranks();
        let p = graph.num_pairs();
        let oriented: Vec<(usize, usize)> = graph
            .pairs
            .iter()
            .map(|e| {
                let (i, j) = (e.i as usize, e.j as usize);
                if ranks[i] < ranks[j] {
                    (i, j)
                } else {
                    (j, i)
                }
            })
            .collect();

        let mut node_groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, k) in graph.kinds.iter().enumerate() {
            node_groups.entry(k.type_tag()).or_default().push(i);
        }
        let mut edge_groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (k, e) in graph.pairs.iter().enumerate() {
            edge_groups.entry(graph.edge_type(e)).or_default().push(k);
        }

        // incident[n] = (neighbour rank, message row, negate)
        let n = graph.num_nodes();
        let mut incident: Vec<Vec<(u32, u32, bool)>> = vec![Vec::new(); n];
        for (k, &(s, d)) in oriented.iter().enumerate() {
            if conserve {
                incident[s].push((ranks[d], k as u32, false));
                incident[d].push((ranks[s], k as u32, true));
            } else {
                incident[s].push((ranks[d], k as u32, false));
                incident[d].push((ranks[s], (p + k) as u32, false));
            }
        }
        let mut entries = Vec::with_capacity(2 * p);
        for (node, list) in incident.iter_mut().enumerate() {
            list.sort_unstable();
            entries.extend(list.iter().map(|&(_, src, negate)| ScatterEntry {
                dst: node as u32,
                src,
                negate,
            }));
        }
        Layout {
            n,
            oriented,
            node_groups,
            edge_groups,
            entries,
        }
    }
}

/// Applies the per-type MLP chosen by `pick` to the rows of `x` in each group.
fn grouped_mlp(
    tape: &mut Tape,
    store: &ParameterStore,
    x: Var,
    total_rows: usize,
    out_cols: usize,
    groups: &BTreeMap<String, Vec<usize>>,
    pick: impl Fn(&str) -> Mlp,
) -> Result<Var> {
    if groups.len() == 1 {
        let (tag, rows) = groups.iter().next().unwrap();
        if rows.len() == total_rows {
            let mlp = pick(tag);
            check_present(store, &mlp, tag)?;
            return mlp.forward(store, tape, x);
        }
    }
    let mut parts = Vec::with_capacity(groups.len());
    for (tag, rows) in groups {
        let mlp = pick(tag);
        check_present(store, &mlp, tag)?;
        let xs = tape.gather(x, rows)?;
        let y = mlp.forward(store, tape, xs)?;
        parts.push((y, rows.clone()));
    }
    tape.merge(total_rows, out_cols, parts)
}

fn check_present(store: &ParameterStore, mlp: &Mlp, tag: &str) -> Result<()> {
    if store.has_function(&mlp.func) {
        Ok(())
    } else {
        Err(GpeError::Config(format!(
            "no `{}` function for type `{tag}` (round {})",
            mlp.func.role.as_str(),
            mlp.func.round
        )))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Engine {
    pub config: EngineConfig,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Engine { config })
    }

    pub fn feature_spec(&self, stats: &NormStats) -> FeatureSpec {
        FeatureSpec {
            node_types: self.config.node_types.clone(),
            param_range: self.config.param_range,
            velocity_scale: stats.velocity_scale,
            force_scale: stats.force_scale(),
        }
    }

    fn check_graph(&self, graph: &SystemGraph) -> Result<()> {
        if graph.dim != self.config.dim {
            return Err(GpeError::Config(format!("graph is {}-D, engine expects {}-D", graph.dim, self.config.dim)));
        }
        if graph.history != self.config.history {
            return Err(GpeError::Config(format!(
                "graph carries {} history frames, engine expects {}",
                graph.history, self.config.history
            )));
        }
        for tag in graph.node_types() {
            if !self.config.node_types.contains(&tag) {
                return Err(GpeError::Config(format!("node type `{tag}` is not configured")));
            }
        }
        Ok(())
    }

    fn encode_with(
        &self,
        layout: &Layout,
        graph: &SystemGraph,
        params: &ParameterStore,
        stats: &NormStats,
        force: &[f64],
        tape: &mut Tape,
    ) -> Result<HiddenState> {
        let cfg = &self.config;
        let h = cfg.hidden_dim;
        let spec = self.feature_spec(stats);
        let nf = cfg.node_feature_len();
        let mut xn = Vec::with_capacity(layout.n * nf);
        for i in 0..layout.n {
            xn.extend(node_feature_vector(graph, i, force, &spec));
        }
        let xn = tape.constant(layout.n, nf, xn)?;
        let node_h = grouped_mlp(tape, params, xn, layout.n, h, &layout.node_groups, |t| cfg.node_encoder(t))?;

        let p = layout.oriented.len();
        let ef = cfg.edge_feature_len();
        let inv = 1.0 / cfg.length_scale;
        let mut xe = Vec::with_capacity(p * ef);
        for &(s, d) in &layout.oriented {
            xe.extend(oriented_edge_feature(graph, s, d).into_iter().map(|v| v * inv));
        }
        let xe_rev: Option<Vec<f64>> = (!cfg.conserve_momentum).then(|| {
            let mut r = xe.clone();
            for row in r.chunks_mut(ef) {
                row[..cfg.dim].iter_mut().for_each(|v| *v = -*v);
            }
            r
        });
        let xe = tape.constant(p, ef, xe)?;
        let edge_h = grouped_mlp(tape, params, xe, p, h, &layout.edge_groups, |t| cfg.edge_encoder(t))?;
        let edge_h_rev = match xe_rev {
            Some(r) => {
                let xr = tape.constant(p, ef, r)?;
                Some(grouped_mlp(tape, params, xr, p, h, &layout.edge_groups, |t| cfg.edge_encoder(t))?)
            }
            None => None,
        };
        Ok(HiddenState {
            node_h,
            edge_h,
            edge_h_rev,
        })
    }

    fn round_with(
        &self,
        layout: &Layout,
        state: HiddenState,
        params: &ParameterStore,
        l: usize,
        tape: &mut Tape,
        evals: &mut u64,
        trace: Option<&mut MessageTrace>,
    ) -> Result<HiddenState> {
        let cfg = &self.config;
        let h = cfg.hidden_dim;
        let p = layout.oriented.len();
        let srcs: Vec<usize> = layout.oriented.iter().map(|o| o.0).collect();
        let dsts: Vec<usize> = layout.oriented.iter().map(|o| o.1).collect();
        let hs = tape.gather(state.node_h, &srcs)?;
        let hd = tape.gather(state.node_h, &dsts)?;
        let input = tape.concat(&[hs, hd, state.edge_h])?;
        let msg = grouped_mlp(tape, params, input, p, h, &layout.edge_groups, |t| cfg.edge_processor(l, t))?;
        *evals += p as u64;

        let (agg, msg_rev) = match state.edge_h_rev {
            None => (tape.scatter(msg, layout.n, layout.entries.clone())?, None),
            Some(eh_rev) => {
                let input_rev = tape.concat(&[hd, hs, eh_rev])?;
                let rev = grouped_mlp(tape, params, input_rev, p, h, &layout.edge_groups, |t| {
                    cfg.edge_processor(l, t)
                })?;
                *evals += p as u64;
                let both = tape.merge(2 * p, h, vec![(msg, (0..p).collect()), (rev, (p..2 * p).collect())])?;
                (tape.scatter(both, layout.n, layout.entries.clone())?, Some(rev))
            }
        };

        if let Some(trace) = trace {
            let forward = tape.value(msg).data().to_vec();
            let backward = match msg_rev {
                Some(r) => tape.value(r).data().to_vec(),
                None => forward.iter().map(|v| -v).collect(),
            };
            trace.rounds.push(RoundMessages {
                oriented: layout.oriented.clone(),
                forward,
                backward,
                aggregates: tape.value(agg).data().to_vec(),
            });
        }

        let update = grouped_mlp(tape, params, agg, layout.n, h, &layout.node_groups, |t| cfg.node_processor(l, t))?;
        let node_h = tape.add(state.node_h, update)?;
        let edge_h = tape.add(state.edge_h, msg)?;
        let edge_h_rev = match (state.edge_h_rev, msg_rev) {
            (Some(e), Some(m)) => Some(tape.add(e, m)?),
            _ => None,
        };
        Ok(HiddenState {
            node_h,
            edge_h,
            edge_h_rev,
        })
    }

    fn decode_with(&self, graph: &SystemGraph, state: HiddenState, params: &ParameterStore, tape: &mut Tape) -> Result<(Vec<usize>, Var)> {
        let cfg = &self.config;
        let nodes = graph.material_nodes();
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (row, &i) in nodes.iter().enumerate() {
            groups.entry(graph.kinds[i].type_tag()).or_default().push(row);
        }
        let hm = tape.gather(state.node_h, &nodes)?;
        let accel = if nodes.is_empty() {
            tape.constant(0, cfg.dim, Vec::new())?
        } else {
            grouped_mlp(tape, params, hm, nodes.len(), cfg.dim, &groups, |t| cfg.decoder(t))?
        };
        Ok((nodes, accel))
    }

    /// Encoder step: per-type node and edge embeddings.
    pub fn encode(
        &self,
        graph: &SystemGraph,
        params: &ParameterStore,
        stats: &NormStats,
        force: &[f64],
        tape: &mut Tape,
    ) -> Result<HiddenState> {
        self.check_graph(graph)?;
        let layout = Layout::new(graph, self.config.conserve_momentum);
        self.encode_with(&layout, graph, params, stats, force, tape)
    }

    /// One message-passing round `l` (1-based). Returns the new state and the message-MLP evaluations.
    pub fn process_round(
        &self,
        state: HiddenState,
        graph: &SystemGraph,
        params: &ParameterStore,
        l: usize,
        tape: &mut Tape,
        trace: Option<&mut MessageTrace>,
    ) -> Result<(HiddenState, u64)> {
        if l == 0 || l > self.config.rounds {
            return Err(GpeError::Contract(format!("round {l} outside 1..={}", self.config.rounds)));
        }
        let layout = Layout::new(graph, self.config.conserve_momentum);
        let mut evals = 0;
        let s = self.round_with(&layout, state, params, l, tape, &mut evals, trace)?;
        Ok((s, evals))
    }

    /// Decoder step: standardized accelerations for the material nodes.
    pub fn decode(&self, state: HiddenState, graph: &SystemGraph, params: &ParameterStore, tape: &mut Tape) -> Result<(Vec<usize>, Var)> {
        self.decode_with(graph, state, params, tape)
    }

    /// Full encode → `L` rounds → decode on `tape`.
    pub fn forward_taped(
        &self,
        graph: &SystemGraph,
        params: &ParameterStore,
        stats: &NormStats,
        force: &[f64],
        tape: &mut Tape,
        mut trace: Option<&mut MessageTrace>,
    ) -> Result<TapedForward> {
        self.check_graph(graph)?;
        let layout = Layout::new(graph, self.config.conserve_momentum);
        let mut state = self.encode_with(&layout, graph, params, stats, force, tape)?;
        let mut evals = 0;
        for l in 1..=self.config.rounds {
            state = self.round_with(&layout, state, params, l, tape, &mut evals, trace.as_deref_mut())?;
        }
        let (nodes, accel) = self.decode_with(graph, state, params, tape)?;
        Ok(TapedForward {
            nodes,
            accel,
            message_evals: evals,
        })
    }

    /// Forward pass without gradient bookkeeping for the caller.
    pub fn forward(&self, graph: &SystemGraph, params: &ParameterStore, stats: &NormStats, force: &[f64]) -> Result<Prediction> {
        self.forward_traced(graph, params, stats, force, None)
    }

    pub fn forward_traced(
        &self,
        graph: &SystemGraph,
        params: &ParameterStore,
        stats: &NormStats,
        force: &[f64],
        trace: Option<&mut MessageTrace>,
    ) -> Result<Prediction> {
        let mut tape = Tape::new();
        let out = self.forward_taped(graph, params, stats, force, &mut tape, trace)?;
        Ok(Prediction {
            nodes: out.nodes,
            accel: tape.value(out.accel).data().to_vec(),
            message_evals: out.message_evals,
        })
    }
}
