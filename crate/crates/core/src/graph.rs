//! Graph data model plus the two topology builders: dynamic radius graphs for
//! particle systems and static multi-scale grid graphs (with virtual nodes) for
//! quad meshes.
//!
//! Edges are stored once per unordered pair with `i < j`; every stored pair
//! stands for both directed edges `i→j` and `j→i`.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::error::{GpeError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NodeKind {
    /// A simulated unit carrying one continuous material parameter.
    Material { type_id: u32, param: f64 },
    /// Static obstacle/wall sample.
    Boundary,
    /// Coarse node of the mesh hierarchy.
    Virtual { level: u32 },
}

pub const BOUNDARY_TAG: &str = "boundary";
pub const VIRTUAL_TAG: &str = "virtual";

impl NodeKind {
    pub fn material(type_id: u32, param: f64) -> Self {
        NodeKind::Material { type_id, param }
    }

    /// Type tag selecting this node's learnable functions.
    pub fn type_tag(&self) -> String {
        match self {
            NodeKind::Material { type_id, .. } => format!("m{type_id}"),
            NodeKind::Boundary => BOUNDARY_TAG.to_string(),
            NodeKind::Virtual { .. } => VIRTUAL_TAG.to_string(),
        }
    }

    pub fn is_material(&self) -> bool {
        matches!(self, NodeKind::Material { .. })
    }

    pub fn is_boundary(&self) -> bool {
        matches!(self, NodeKind::Boundary)
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self, NodeKind::Virtual { .. })
    }

    pub fn param(&self) -> Option<f64> {
        match self {
            NodeKind::Material { param, .. } => Some(*param),
            _ => None,
        }
    }

    pub fn level(&self) -> u32 {
        match self {
            NodeKind::Virtual { level } => *level,
            _ => 0,
        }
    }

    fn order_key(&self) -> (u8, u32) {
        match self {
            NodeKind::Material { type_id, .. } => (0, *type_id),
            NodeKind::Boundary => (1, 0),
            NodeKind::Virtual { level } => (2, *level),
        }
    }
}

/// Order-normalized pair of node type tags, e.g. `boundary+m0`.
pub fn edge_type_tag(a: &NodeKind, b: &NodeKind) -> String {
    let (x, y) = (a.type_tag(), b.type_tag());
    if x <= y {
        format!("{x}+{y}")
    } else {
        format!("{y}+{x}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeClass {
    /// Radius-graph neighbours.
    Radius,
    /// Two vertices of the same mesh cell.
    Mesh,
    /// Child to parent link in the hierarchy.
    Virtual,
    /// Face-adjacent virtual nodes of the same level.
    Lateral,
    /// Dynamic mesh-vertex to boundary-node contact.
    Contact,
}

impl EdgeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeClass::Radius => "radius",
            EdgeClass::Mesh => "mesh",
            EdgeClass::Virtual => "virtual",
            EdgeClass::Lateral => "lateral",
            EdgeClass::Contact => "contact",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgePair {
    pub i: u32,
    pub j: u32,
    pub class: EdgeClass,
    pub level: u32,
}

impl EdgePair {
    fn new(a: usize, b: usize, class: EdgeClass, level: u32) -> Self {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        EdgePair {
            i: i as u32,
            j: j as u32,
            class,
            level,
        }
    }
}

/// Quad mesh on a regular `nx × ny` cell grid; vertices are row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeshTopology {
    pub grid_dims: [usize; 2],
    pub cells: Vec<[u32; 4]>,
    pub n_vertices: usize,
}

impl MeshTopology {
    pub fn grid(nx: usize, ny: usize) -> Result<Self> {
        for (axis, n) in [("x", nx), ("y", ny)] {
            if n == 0 || !n.is_power_of_two() {
                return Err(GpeError::Input(format!(
                    "mesh grid dimension along {axis} must be a power of two, got {n}"
                )));
            }
        }
        let vid = |ix: usize, iy: usize| (iy * (nx + 1) + ix) as u32;
        let mut cells = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                cells.push([vid(ix, iy), vid(ix + 1, iy), vid(ix + 1, iy + 1), vid(ix, iy + 1)]);
            }
        }
        Ok(MeshTopology {
            grid_dims: [nx, ny],
            cells,
            n_vertices: (nx + 1) * (ny + 1),
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (c, cell) in self.cells.iter().enumerate() {
            if let Some(v) = cell.iter().find(|&&v| v as usize >= self.n_vertices) {
                return Err(GpeError::Input(format!("cell {c} references vertex {v} >= {}", self.n_vertices)));
            }
        }
        for n in self.grid_dims {
            if n == 0 || !n.is_power_of_two() {
                return Err(GpeError::Input(format!("grid dims {:?} are not powers of two", self.grid_dims)));
            }
        }
        Ok(())
    }

    /// Number of hierarchy levels above the mesh (at least one root).
    pub fn levels(&self) -> usize {
        let m = self.grid_dims[0].max(self.grid_dims[1]);
        (m.trailing_zeros() as usize).max(1)
    }

    pub fn level_dims(&self, level: usize) -> [usize; 2] {
        [
            (self.grid_dims[0] >> level).max(1),
            (self.grid_dims[1] >> level).max(1),
        ]
    }
}

/// Virtual-node bookkeeping for mesh graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct Hierarchy {
    /// Number of non-virtual nodes (mesh vertices followed by boundary nodes).
    pub real_nodes: usize,
    /// Children of each virtual node, indexed from `real_nodes`, in creation (level) order.
    pub children: Vec<Vec<u32>>,
    /// Count of static (non-contact) edges at the front of `pairs`.
    pub static_pairs: usize,
    pub mesh: MeshTopology,
}

/// Typed nodes with positions and velocity histories plus canonical edge pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemGraph {
    pub dim: usize,
    pub history: usize,
    pub kinds: Vec<NodeKind>,
    /// `n × dim`, row-major.
    pub positions: Vec<f64>,
    /// `n × history × dim`, most recent velocity first.
    pub velocity_history: Vec<f64>,
    pub pairs: Vec<EdgePair>,
    pub hierarchy: Option<Hierarchy>,
}

impl SystemGraph {
    /// Nodes without edges; histories zero.
    pub fn new(dim: usize, history: usize, kinds: Vec<NodeKind>, positions: Vec<f64>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(GpeError::Input(format!("dimension must be 2 or 3, got {dim}")));
        }
        if positions.len() != kinds.len() * dim {
            return Err(GpeError::dim("positions", kinds.len() * dim, positions.len()));
        }
        let n = kinds.len();
        Ok(SystemGraph {
            dim,
            history,
            kinds,
            positions,
            velocity_history: vec![0.0; n * history * dim],
            pairs: Vec::new(),
            hierarchy: None,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.kinds.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn history_of(&self, i: usize) -> &[f64] {
        let w = self.history * self.dim;
        &self.velocity_history[i * w..(i + 1) * w]
    }

    pub fn is_mesh(&self) -> bool {
        self.hierarchy.is_some()
    }

    pub fn material_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&i| self.kinds[i].is_material()).collect()
    }

    /// Distinct node type tags present, sorted.
    pub fn node_types(&self) -> Vec<String> {
        let set: BTreeSet<String> = self.kinds.iter().map(NodeKind::type_tag).collect();
        set.into_iter().collect()
    }

    pub fn edge_type(&self, p: &EdgePair) -> String {
        edge_type_tag(&self.kinds[p.i as usize], &self.kinds[p.j as usize])
    }

    /// Neighbours of `i` with the pair index that connects them.
    pub fn neighbors(&self, i: usize) -> Vec<(usize, usize)> {
        self.pairs
            .iter()
            .enumerate()
            .filter_map(|(k, p)| {
                if p.i as usize == i {
                    Some((p.j as usize, k))
                } else if p.j as usize == i {
                    Some((p.i as usize, k))
                } else {
                    None
                }
            })
            .collect()
    }

    /// Shifts every position by `offset`.
    pub fn translate(&mut self, offset: &[f64]) {
        for p in self.positions.chunks_mut(self.dim) {
            p.iter_mut().zip(offset).for_each(|(x, o)| *x += o);
        }
    }

    /// Relabels nodes: new node `k` is old node `perm[k]`. Pairs are re-canonicalized and sorted.
    pub fn permuted(&self, perm: &[usize]) -> Result<SystemGraph> {
        let n = self.num_nodes();
        if perm.len() != n {
            return Err(GpeError::dim("permutation", n, perm.len()));
        }
        let mut inverse = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(GpeError::Input("not a permutation".into()));
            }
            inverse[old] = new;
        }
        let d = self.dim;
        let w = self.history * d;
        let mut g = self.clone();
        g.hierarchy = None;
        for (new, &old) in perm.iter().enumerate() {
            g.kinds[new] = self.kinds[old];
            g.positions[new * d..(new + 1) * d].copy_from_slice(self.position(old));
            g.velocity_history[new * w..(new + 1) * w].copy_from_slice(self.history_of(old));
        }
        g.pairs = self
            .pairs
            .iter()
            .map(|p| EdgePair::new(inverse[p.i as usize], inverse[p.j as usize], p.class, p.level))
            .collect();
        g.pairs.sort();
        Ok(g)
    }

    /// Canonical rank of every node: lexicographic position order, then kind, then index.
    ///
    /// Independent of node labelling whenever positions (with kind) are distinct, so
    /// message orientation and summation order built on it commute with relabelling
    /// and with exact translations.
    pub fn canonical_ranks(&self) -> Vec<u32> {
        let d = self.dim;
        let mut order: Vec<usize> = (0..self.num_nodes()).collect();
        order.sort_by(|&a, &b| {
            let pa = &self.positions[a * d..(a + 1) * d];
            let pb = &self.positions[b * d..(b + 1) * d];
            for (x, y) in pa.iter().zip(pb) {
                match x.total_cmp(y) {
                    Ordering::Equal => continue,
                    o => return o,
                }
            }
            self.kinds[a]
                .order_key()
                .cmp(&self.kinds[b].order_key())
                .then(a.cmp(&b))
        });
        let mut rank = vec![0u32; order.len()];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r as u32;
        }
        rank
    }

    /// Line-oriented text dump for diffing in tests.
    pub fn debug_dump(&self) -> String {
        let mut s = String::new();
        for (i, k) in self.kinds.iter().enumerate() {
            let kind = match k {
                NodeKind::Material { type_id, param } => format!("material:{type_id}:{param}"),
                NodeKind::Boundary => "boundary".to_string(),
                NodeKind::Virtual { .. } => "virtual".to_string(),
            };
            let pos: Vec<String> = self.position(i).iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(s, "node {i} {kind} {} {}", k.level(), pos.join(" "));
        }
        for p in &self.pairs {
            let _ = writeln!(
                s,
                "edge {} {} {} {} {}",
                p.i,
                p.j,
                self.edge_type(p),
                p.class.as_str(),
                p.level
            );
        }
        s
    }

    /// Replaces the edge set with the radius graph of the current positions.
    pub fn rebuild_edges(&self, r: f64) -> Result<SystemGraph> {
        if self.is_mesh() || self.kinds.iter().any(NodeKind::is_virtual) {
            return Err(GpeError::Contract(
                "rebuild_edges applies to particle graphs; mesh graphs keep their static topology".into(),
            ));
        }
        let mut g = self.clone();
        g.pairs = build_radius_graph(&self.positions, &self.kinds, self.dim, r)?;
        Ok(g)
    }

    /// Recomputes virtual-node positions and velocity histories as children means.
    pub fn refresh_virtual_nodes(&mut self) {
        let Some(h) = &self.hierarchy else { return };
        let d = self.dim;
        let w = self.history * d;
        for (k, children) in h.children.iter().enumerate() {
            let v = h.real_nodes + k;
            let inv = 1.0 / children.len() as f64;
            let mut pos = vec![0.0; d];
            let mut hist = vec![0.0; w];
            for &c in children {
                let c = c as usize;
                pos.iter_mut().zip(&self.positions[c * d..(c + 1) * d]).for_each(|(a, b)| *a += b);
                hist.iter_mut()
                    .zip(&self.velocity_history[c * w..(c + 1) * w])
                    .for_each(|(a, b)| *a += b);
            }
            pos.iter_mut().for_each(|x| *x *= inv);
            hist.iter_mut().for_each(|x| *x *= inv);
            self.positions[v * d..(v + 1) * d].copy_from_slice(&pos);
            self.velocity_history[v * w..(v + 1) * w].copy_from_slice(&hist);
        }
    }

    /// Drops previous contact edges and links material nodes to boundary nodes closer than `r`.
    pub fn refresh_contacts(&mut self, r: f64) -> Result<()> {
        let Some(h) = &self.hierarchy else {
            return Err(GpeError::Contract("contact edges apply to mesh graphs".into()));
        };
        let real = h.real_nodes;
        let keep = h.static_pairs;
        self.pairs.truncate(keep);
        let d = self.dim;
        let kinds: Vec<NodeKind> = self.kinds[..real].to_vec();
        let candidates = build_radius_graph(&self.positions[..real * d], &kinds, d, r)?;
        self.pairs.extend(
            candidates
                .into_iter()
                .filter(|p| kinds[p.i as usize].is_boundary() != kinds[p.j as usize].is_boundary())
                .map(|p| EdgePair { class: EdgeClass::Contact, ..p }),
        );
        Ok(())
    }
}

fn check_positions(positions: &[f64], dim: usize) -> Result<()> {
    for (i, p) in positions.chunks(dim).enumerate() {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(GpeError::Input(format!("non-finite position at node {i}")));
        }
    }
    Ok(())
}

/// All pairs `i < j` with `|xᵢ − xⱼ| < r`, found with a uniform spatial hash of cell size `r`.
///
/// Pairs of two boundary nodes are skipped. Output is sorted by `(i, j)`.
pub fn build_radius_graph(positions: &[f64], kinds: &[NodeKind], dim: usize, r: f64) -> Result<Vec<EdgePair>> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(GpeError::Input(format!("cutoff radius must be positive and finite, got {r}")));
    }
    if dim != 2 && dim != 3 {
        return Err(GpeError::Input(format!("dimension must be 2 or 3, got {dim}")));
    }
    if positions.len() != kinds.len() * dim {
        return Err(GpeError::dim("positions", kinds.len() * dim, positions.len()));
    }
    check_positions(positions, dim)?;

    let cell_of = |p: &[f64]| {
        let mut c = [0i64; 3];
        for (k, v) in p.iter().enumerate() {
            c[k] = (v / r).floor() as i64;
        }
        c
    };
    let mut grid: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
    for (i, p) in positions.chunks(dim).enumerate() {
        grid.entry(cell_of(p)).or_default().push(i as u32);
    }

    let r2 = r * r;
    let span: i64 = 1;
    let zr = if dim == 3 { span } else { 0 };
    let mut pairs = Vec::new();
    for (i, p) in positions.chunks(dim).enumerate() {
        let c = cell_of(p);
        for dx in -span..=span {
            for dy in -span..=span {
                for dz in -zr..=zr {
                    let Some(bucket) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                        continue;
                    };
                    for &j in bucket {
                        let j = j as usize;
                        if j <= i || (kinds[i].is_boundary() && kinds[j].is_boundary()) {
                            continue;
                        }
                        if squared_distance(p, &positions[j * dim..(j + 1) * dim]) < r2 {
                            pairs.push(EdgePair::new(i, j, EdgeClass::Radius, 0));
                        }
                    }
                }
            }
        }
    }
    pairs.sort();
    Ok(pairs)
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Particle graph: nodes plus radius edges.
pub fn particle_graph(dim: usize, history: usize, kinds: Vec<NodeKind>, positions: Vec<f64>, r: f64) -> Result<SystemGraph> {
    let mut g = SystemGraph::new(dim, history, kinds, positions)?;
    g.pairs = build_radius_graph(&g.positions, &g.kinds, dim, r)?;
    Ok(g)
}

/// Static multi-scale grid graph over a 2-D quad mesh.
///
/// `positions`/`kinds` list the mesh vertices first (`mesh.n_vertices` of them)
/// followed by any boundary nodes. Virtual nodes are appended level by level:
/// a level-`k` node covers a `2^k × 2^k` block of cells (clipped to the grid),
/// level-1 nodes link to every vertex of their block, higher levels link to
/// their (up to four) children, and same-level nodes sharing a block face are
/// linked laterally. A grid of a single cell gets one root over its 4 vertices.
pub fn build_multiscale_grid(mesh: &MeshTopology, positions: &[f64], kinds: &[NodeKind], history: usize) -> Result<SystemGraph> {
    mesh.validate()?;
    let dim = 2;
    if kinds.len() < mesh.n_vertices {
        return Err(GpeError::Input(format!(
            "mesh has {} vertices but only {} nodes were supplied",
            mesh.n_vertices,
            kinds.len()
        )));
    }
    if positions.len() != kinds.len() * dim {
        return Err(GpeError::dim("positions", kinds.len() * dim, positions.len()));
    }
    check_positions(positions, dim)?;
    if let Some(v) = kinds[..mesh.n_vertices].iter().position(|k| !k.is_material()) {
        return Err(GpeError::Input(format!("mesh vertex {v} must be a material node")));
    }
    if let Some(v) = kinds[mesh.n_vertices..].iter().position(|k| k.is_virtual()) {
        return Err(GpeError::Input(format!("node {} is virtual; virtual nodes are generated", v + mesh.n_vertices)));
    }

    let real = kinds.len();
    let mut all_kinds = kinds.to_vec();
    let mut pairs: BTreeSet<EdgePair> = BTreeSet::new();
    for cell in &mesh.cells {
        for a in 0..4 {
            for b in a + 1..4 {
                pairs.insert(EdgePair::new(cell[a] as usize, cell[b] as usize, EdgeClass::Mesh, 0));
            }
        }
    }

    let [nx, _] = mesh.grid_dims;
    let mut children: Vec<Vec<u32>> = Vec::new();
    let mut prev_ids: Vec<usize> = Vec::new();
    let mut prev_dims = mesh.grid_dims;
    for level in 1..=mesh.levels() {
        let [lx, ly] = mesh.level_dims(level);
        let base = real + children.len();
        let id = |bx: usize, by: usize| base + by * lx + bx;
        for by in 0..ly {
            for bx in 0..lx {
                let mut ch: BTreeSet<u32> = BTreeSet::new();
                if level == 1 {
                    let cx0 = bx * 2;
                    let cy0 = by * 2;
                    for cy in cy0..(cy0 + 2).min(mesh.grid_dims[1]) {
                        for cx in cx0..(cx0 + 2).min(nx) {
                            ch.extend(mesh.cells[cy * nx + cx]);
                        }
                    }
                } else {
                    let [px, py] = prev_dims;
                    for cy in 0..py {
                        for cx in 0..px {
                            if (cx >> 1).min(lx - 1) == bx && (cy >> 1).min(ly - 1) == by {
                                ch.insert(prev_ids[cy * px + cx] as u32);
                            }
                        }
                    }
                }
                let me = id(bx, by);
                for &c in &ch {
                    pairs.insert(EdgePair::new(c as usize, me, EdgeClass::Virtual, level as u32));
                }
                if bx + 1 < lx {
                    pairs.insert(EdgePair::new(me, id(bx + 1, by), EdgeClass::Lateral, level as u32));
                }
                if by + 1 < ly {
                    pairs.insert(EdgePair::new(me, id(bx, by + 1), EdgeClass::Lateral, level as u32));
                }
                all_kinds.push(NodeKind::Virtual { level: level as u32 });
                children.push(ch.into_iter().collect());
            }
        }
        prev_ids = (0..lx * ly).map(|k| base + k).collect();
        prev_dims = [lx, ly];
    }

    let mut all_positions = positions.to_vec();
    all_positions.resize(all_kinds.len() * dim, 0.0);
    let mut g = SystemGraph::new(dim, history, all_kinds, all_positions)?;
    g.pairs = pairs.into_iter().collect();
    g.pairs.sort();
    g.hierarchy = Some(Hierarchy {
        real_nodes: real,
        static_pairs: g.pairs.len(),
        children,
        mesh: mesh.clone(),
    });
    g.refresh_virtual_nodes();
    Ok(g)
}

/// Affine map of a material parameter onto `[0, 1]` over the configured range.
pub fn scale_param(value: f64, range: (f64, f64)) -> f64 {
    let (lo, hi) = range;
    if hi > lo {
        (value - lo) / (hi - lo)
    } else {
        0.0
    }
}

/// Inputs to the node feature map that come from configuration and data statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSpec {
    pub node_types: Vec<String>,
    pub param_range: (f64, f64),
    /// Velocities are divided by this before entering the features.
    pub velocity_scale: f64,
    /// External forces are divided by this.
    pub force_scale: f64,
}

impl FeatureSpec {
    pub fn node_feature_len(&self, history: usize, dim: usize) -> usize {
        history * dim + dim + 1 + self.node_types.len()
    }
}

/// `[C recent velocities | external force | scaled material parameter | one-hot type]`.
///
/// Absolute position never enters the features.
pub fn node_feature_vector(graph: &SystemGraph, node: usize, force: &[f64], spec: &FeatureSpec) -> Vec<f64> {
    let mut f = Vec::with_capacity(spec.node_feature_len(graph.history, graph.dim));
    f.extend(graph.history_of(node).iter().map(|v| v / spec.velocity_scale));
    f.extend(force.iter().take(graph.dim).map(|v| v / spec.force_scale));
    let kind = &graph.kinds[node];
    f.push(kind.param().map(|p| scale_param(p, spec.param_range)).unwrap_or(0.0));
    let tag = kind.type_tag();
    f.extend(spec.node_types.iter().map(|t| if *t == tag { 1.0 } else { 0.0 }));
    f
}

/// `[xₐ − x_b | ‖xₐ − x_b‖]` for an ordered node pair.
pub fn oriented_edge_feature(graph: &SystemGraph, a: usize, b: usize) -> Vec<f64> {
    let mut f: Vec<f64> = graph
        .position(a)
        .iter()
        .zip(graph.position(b))
        .map(|(x, y)| x - y)
        .collect();
    let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    f.push(norm);
    f
}

/// Edge feature of a stored pair in its canonical `i → j` orientation.
pub fn edge_feature_vector(graph: &SystemGraph, pair_index: usize) -> Vec<f64> {
    let p = graph.pairs[pair_index];
    oriented_edge_feature(graph, p.i as usize, p.j as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(n: usize) -> Vec<NodeKind> {
        vec![NodeKind::material(0, 1.0); n]
    }

    #[test]
    fn single_node_has_no_edges() {
        assert!(build_radius_graph(&[0.5, 0.5], &mat(1), 2, 0.4).unwrap().is_empty());
    }

    #[test]
    fn two_nodes_within_cutoff() {
        let pairs = build_radius_graph(&[0.0, 0.0, 0.3, 0.0], &mat(2), 2, 0.4).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].i, pairs[0].j), (0, 1));
    }

    #[test]
    fn boundary_pairs_are_skipped() {
        let kinds = vec![NodeKind::Boundary, NodeKind::Boundary, NodeKind::material(0, 0.5)];
        let pairs = build_radius_graph(&[0.0, 0.0, 0.1, 0.0, 0.05, 0.0], &kinds, 2, 0.4).unwrap();
        assert_eq!(pairs.iter().map(|p| (p.i, p.j)).collect::<Vec<_>>(), vec![(0, 2), (1, 2)]);
    }

    #[test]
    fn non_finite_position_names_node() {
        let err = build_radius_graph(&[0.0, 0.0, f64::NAN, 0.0], &mat(2), 2, 0.4).unwrap_err();
        assert!(err.to_string().contains("node 1"), "{err}");
    }

    #[test]
    fn threshold_crossing_on_rebuild() {
        let g = particle_graph(2, 1, mat(2), vec![0.0, 0.0, 0.5, 0.0], 0.4).unwrap();
        assert!(g.pairs.is_empty());
        assert_eq!(g.rebuild_edges(0.4).unwrap(), g);
        let mut moved = g.clone();
        moved.positions[2] = 0.3;
        assert_eq!(moved.rebuild_edges(0.4).unwrap().pairs.len(), 1);
    }

    #[test]
    fn rebuild_on_mesh_graph_is_contract_error() {
        let mesh = MeshTopology::grid(1, 1).unwrap();
        let pos = vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let g = build_multiscale_grid(&mesh, &pos, &mat(4), 1).unwrap();
        assert!(matches!(g.rebuild_edges(0.4), Err(GpeError::Contract(_))));
    }

    #[test]
    fn smallest_mesh_hierarchy() {
        let mesh = MeshTopology::grid(1, 1).unwrap();
        let pos = vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let g = build_multiscale_grid(&mesh, &pos, &mat(4), 1).unwrap();
        assert_eq!(g.num_nodes(), 5);
        let count = |c: EdgeClass| g.pairs.iter().filter(|p| p.class == c).count();
        assert_eq!(count(EdgeClass::Mesh), 6);
        assert_eq!(count(EdgeClass::Virtual), 4);
        assert_eq!(count(EdgeClass::Lateral), 0);
        assert_eq!(g.position(4), &[0.5, 0.5]);
    }

    #[test]
    fn four_by_four_hierarchy_by_hand() {
        let mesh = MeshTopology::grid(4, 4).unwrap();
        let mut pos = Vec::new();
        for iy in 0..5 {
            for ix in 0..5 {
                pos.extend([ix as f64, iy as f64]);
            }
        }
        let g = build_multiscale_grid(&mesh, &pos, &mat(25), 1).unwrap();
        let level = |l: u32| g.kinds.iter().filter(|k| matches!(k, NodeKind::Virtual { level } if *level == l)).count();
        assert_eq!((level(1), level(2), level(3)), (4, 1, 0));
        let lateral = |l: u32| g.pairs.iter().filter(|p| p.class == EdgeClass::Lateral && p.level == l).count();
        assert_eq!(lateral(1), 4);
        assert_eq!(lateral(2), 0);
        let root = g.num_nodes() - 1;
        assert_eq!(g.position(root), &[2.0, 2.0]);
        assert_eq!(g.neighbors(root).len(), 4);
        // first level-1 block covers cells (0..2, 0..2): a 3×3 patch of vertices
        assert_eq!(g.hierarchy.as_ref().unwrap().children[0], vec![0, 1, 2, 5, 6, 7, 10, 11, 12]);
        assert_eq!(g.position(25), &[1.0, 1.0]);
    }

    #[test]
    fn non_power_of_two_grid_rejected() {
        assert!(matches!(MeshTopology::grid(3, 4), Err(GpeError::Input(_))));
    }

    #[test]
    fn edge_feature_three_four_five() {
        let g = particle_graph(2, 1, mat(2), vec![0.3, 0.4, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(edge_feature_vector(&g, 0), vec![0.3, 0.4, 0.5]);
        assert_eq!(oriented_edge_feature(&g, 1, 0), vec![-0.3, -0.4, 0.5]);
        let same = particle_graph(2, 1, mat(2), vec![0.2, 0.2, 0.2, 0.2], 1.0).unwrap();
        assert_eq!(edge_feature_vector(&same, 0), vec![0.0, 0.0, 0.0]);
    }

    fn spec() -> FeatureSpec {
        FeatureSpec {
            node_types: vec!["boundary".into(), "m0".into()],
            param_range: (0.1, 2.0),
            velocity_scale: 1.0,
            force_scale: 1.0,
        }
    }

    #[test]
    fn resting_node_at_range_minimum_is_one_hot() {
        let g = SystemGraph::new(2, 3, vec![NodeKind::material(0, 0.1)], vec![5.0, 7.0]).unwrap();
        let f = node_feature_vector(&g, 0, &[0.0, 0.0], &spec());
        assert_eq!(f, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn parameter_slot_is_affine() {
        let s = FeatureSpec { param_range: (1.0, 3.0), ..spec() };
        let slot = |p: f64| {
            let g = SystemGraph::new(2, 1, vec![NodeKind::material(0, p)], vec![0.0, 0.0]).unwrap();
            node_feature_vector(&g, 0, &[0.0, 0.0], &s)[4]
        };
        assert_eq!(slot(2.0), 0.5);
        let (v1, v2, lam) = (0.35, 1.6, 0.3);
        let lhs = slot(lam * v1 + (1.0 - lam) * v2);
        let rhs = lam * slot(v1) + (1.0 - lam) * slot(v2);
        assert!((lhs - rhs).abs() < 1e-15);
    }

    #[test]
    fn debug_dump_lists_nodes_and_edges() {
        let g = particle_graph(2, 1, mat(2), vec![0.0, 0.0, 0.25, 0.0], 0.4).unwrap();
        let dump = g.debug_dump();
        assert_eq!(dump, "node 0 material:0:1 0 0 0\nnode 1 material:0:1 0 0.25 0\nedge 0 1 m0+m0 radius 0\n");
    }
}
