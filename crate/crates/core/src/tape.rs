//! Reverse-mode differentiation over batched matrix primitives.
//!
//! Every value on the tape is a 2-D row-major matrix (`rows × cols`); scalars
//! are `1 × 1`. Parameters enter through [`Tape::param`], which snapshots the
//! store value once per tape. [`Tape::backward`] accumulates `dLoss/dParam`
//! into the store's gradient slots.

use std::collections::BTreeMap;

use crate::error::{GpeError, Result};
use crate::params::{ParamKey, ParameterStore};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

/// One signed contribution `out[dst] += sign * x[src]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScatterEntry {
    pub dst: u32,
    pub src: u32,
    pub negate: bool,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamKey),
    Linear { x: Var, w: Var, b: Var },
    Prelu { x: Var, slope: Var },
    Gather { x: Var, rows: Vec<usize> },
    Merge { parts: Vec<(Var, Vec<usize>)> },
    Scatter { x: Var, entries: Vec<ScatterEntry> },
    Concat { xs: Vec<Var> },
    Add { a: Var, b: Var },
    Neg { x: Var },
    Mse { pred: Var, target: Tensor },
    WeightedSum { terms: Vec<(Var, f64)> },
    Sum { x: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamKey, Var>,
}

fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(vec![rows, cols], data).expect("tape op produced inconsistent shape")
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant `rows × cols` input.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(GpeError::dim("constant", rows * cols, data.len()));
        }
        Ok(self.push(mat(rows, cols, data), Op::Constant))
    }

    /// Snapshot of a stored parameter; repeated calls with the same key share one node.
    pub fn param(&mut self, store: &ParameterStore, key: &ParamKey) -> Result<Var> {
        if let Some(&v) = self.params.get(key) {
            return Ok(v);
        }
        let t = store.value(key)?;
        let (r, c) = match t.shape() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => return Err(GpeError::dim(key.to_string(), "rank 1 or 2", format!("{s:?}"))),
        };
        let v = self.push(mat(r, c, t.data().to_vec()), Op::Param(key.clone()));
        self.params.insert(key.clone(), v);
        Ok(v)
    }

    /// `y = x·Wᵀ + b` with `x: n×in`, `W: out×in`, `b: 1×out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, fin) = self.dims(x);
        let (fout, win) = self.dims(w);
        if fin != win {
            return Err(GpeError::dim("linear input", win, fin));
        }
        if self.dims(b) != (1, fout) {
            return Err(GpeError::dim("linear bias", fout, self.value(b).len()));
        }
        let mut out = Vec::with_capacity(n * fout);
        let bias = self.value(b).data();
        for _ in 0..n {
            out.extend_from_slice(bias);
        }
        gemm_nt(n, fin, fout, 1.0, self.value(x).data(), self.value(w).data(), 1.0, &mut out);
        Ok(self.push(mat(n, fout, out), Op::Linear { x, w, b }))
    }

    /// PReLU with a single learnable slope: `x` for `x >= 0`, `slope * x` otherwise.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if self.value(slope).len() != 1 {
            return Err(GpeError::dim("prelu slope", 1, self.value(slope).len()));
        }
        let a = self.value(slope).data()[0];
        let (r, c) = self.dims(x);
        let out = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v >= 0.0 { v } else { a * v })
            .collect();
        Ok(self.push(mat(r, c, out), Op::Prelu { x, slope }))
    }

    /// `y[k] = x[rows[k]]`.
    pub fn gather(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, c) = self.dims(x);
        let src = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= n {
                return Err(GpeError::dim("gather row", format!("< {n}"), r));
            }
            out.extend_from_slice(src.row(r));
        }
        Ok(self.push(mat(rows.len(), c, out), Op::Gather { x, rows: rows.to_vec() }))
    }

    /// Places each part's rows at the given output rows of an `n × cols` zero matrix.
    pub fn merge(&mut self, n: usize, cols: usize, parts: Vec<(Var, Vec<usize>)>) -> Result<Var> {
        let mut out = vec![0.0; n * cols];
        for (v, rows) in &parts {
            let (pr, pc) = self.dims(*v);
            if pc != cols || pr != rows.len() {
                return Err(GpeError::dim("merge part", format!("{}×{cols}", rows.len()), format!("{pr}×{pc}")));
            }
            let src = self.value(*v);
            for (k, &r) in rows.iter().enumerate() {
                if r >= n {
                    return Err(GpeError::dim("merge row", format!("< {n}"), r));
                }
                out[r * cols..(r + 1) * cols].copy_from_slice(src.row(k));
            }
        }
        Ok(self.push(mat(n, cols, out), Op::Merge { parts }))
    }

    /// Signed scatter-sum into `n` rows, accumulated strictly in `entries` order.
    pub fn scatter(&mut self, x: Var, n: usize, entries: Vec<ScatterEntry>) -> Result<Var> {
        let (xr, c) = self.dims(x);
        let mut out = vec![0.0; n * c];
        let src = self.value(x);
        for e in &entries {
            let (d, s) = (e.dst as usize, e.src as usize);
            if d >= n || s >= xr {
                return Err(GpeError::dim("scatter entry", format!("dst < {n}, src < {xr}"), format!("{d}, {s}")));
            }
            let row = src.row(s);
            let o = &mut out[d * c..(d + 1) * c];
            if e.negate {
                o.iter_mut().zip(row).for_each(|(a, b)| *a -= *b);
            } else {
                o.iter_mut().zip(row).for_each(|(a, b)| *a += *b);
            }
        }
        Ok(self.push(mat(n, c, out), Op::Scatter { x, entries }))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let n = xs.first().map(|&v| self.dims(v).0).unwrap_or(0);
        let mut total = 0;
        for &v in xs {
            let (r, c) = self.dims(v);
            if r != n {
                return Err(GpeError::dim("concat rows", n, r));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for &v in xs {
                out.extend_from_slice(self.value(v).row(r));
            }
        }
        Ok(self.push(mat(n, total, out), Op::Concat { xs: xs.to_vec() }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(GpeError::dim("add", format!("{:?}", self.dims(a)), format!("{:?}", self.dims(b))));
        }
        let (r, c) = self.dims(a);
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(mat(r, c, out), Op::Add { a, b }))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let out = self.value(x).data().iter().map(|v| -v).collect();
        self.push(mat(r, c, out), Op::Neg { x })
    }

    /// Mean of squared differences over every entry; yields a `1×1` scalar.
    pub fn mse(&mut self, pred: Var, target: Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() {
            return Err(GpeError::dim("mse target", p.len(), target.len()));
        }
        let n = p.len();
        let loss = if n == 0 {
            0.0
        } else {
            p.data()
                .iter()
                .zip(target.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n as f64
        };
        Ok(self.push(mat(1, 1, vec![loss]), Op::Mse { pred, target }))
    }

    /// Sum of every entry as a `1×1` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(mat(1, 1, vec![s]), Op::Sum { x })
    }

    /// `Σ wₖ·sₖ` over scalar values.
    pub fn weighted_sum(&mut self, terms: Vec<(Var, f64)>) -> Result<Var> {
        let mut acc = 0.0;
        for &(v, w) in &terms {
            if self.value(v).len() != 1 {
                return Err(GpeError::Contract("weighted_sum terms must be scalars".into()));
            }
            acc += w * self.value(v).data()[0];
        }
        Ok(self.push(mat(1, 1, vec![acc]), Op::WeightedSum { terms }))
    }

    /// Propagates `d loss` back through the tape and adds parameter gradients into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParameterStore) -> Result<()> {
        self.backward_scaled(loss, 1.0, store)
    }

    /// As [`Tape::backward`] for the loss multiplied by `scale`.
    pub fn backward_scaled(&self, loss: Var, scale: f64, store: &mut ParameterStore) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(GpeError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![scale]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(key) => {
                    store.get_mut(key)?.grad.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::Linear { x, w, b } => {
                    let (n, fin) = self.dims(*x);
                    let fout = node.value.cols();
                    let gx = acc(&mut grads, *x, n * fin);
                    gemm_nn(n, fout, fin, 1.0, &g, self.value(*w).data(), 1.0, gx);
                    let gw = acc(&mut grads, *w, fout * fin);
                    gemm_tn(fout, n, fin, 1.0, &g, self.value(*x).data(), 1.0, gw);
                    let gb = acc(&mut grads, *b, fout);
                    for r in 0..n {
                        gb.iter_mut().zip(&g[r * fout..(r + 1) * fout]).for_each(|(a, v)| *a += v);
                    }
                }
                Op::Prelu { x, slope } => {
                    let a = self.value(*slope).data()[0];
                    let xv = self.value(*x).data();
                    let mut ga = 0.0;
                    let gx = acc(&mut grads, *x, xv.len());
                    for ((gxi, &xi), &gi) in gx.iter_mut().zip(xv).zip(&g) {
                        if xi >= 0.0 {
                            *gxi += gi;
                        } else {
                            *gxi += a * gi;
                            ga += gi * xi;
                        }
                    }
                    acc(&mut grads, *slope, 1)[0] += ga;
                }
                Op::Gather { x, rows } => {
                    let (n, c) = self.dims(*x);
                    let gx = acc(&mut grads, *x, n * c);
                    for (k, &r) in rows.iter().enumerate() {
                        gx[r * c..(r + 1) * c]
                            .iter_mut()
                            .zip(&g[k * c..(k + 1) * c])
                            .for_each(|(a, v)| *a += v);
                    }
                }
                Op::Merge { parts } => {
                    let c = node.value.cols();
                    for (v, rows) in parts {
                        let gp = acc(&mut grads, *v, rows.len() * c);
                        for (k, &r) in rows.iter().enumerate() {
                            gp[k * c..(k + 1) * c]
                                .iter_mut()
                                .zip(&g[r * c..(r + 1) * c])
                                .for_each(|(a, v)| *a += v);
                        }
                    }
                }
                Op::Scatter { x, entries } => {
                    let (n, c) = self.dims(*x);
                    let gx = acc(&mut grads, *x, n * c);
                    for e in entries {
                        let (d, s) = (e.dst as usize, e.src as usize);
                        let src = &g[d * c..(d + 1) * c];
                        let dst = &mut gx[s * c..(s + 1) * c];
                        if e.negate {
                            dst.iter_mut().zip(src).for_each(|(a, v)| *a -= v);
                        } else {
                            dst.iter_mut().zip(src).for_each(|(a, v)| *a += v);
                        }
                    }
                }
                Op::Concat { xs } => {
                    let n = node.value.rows();
                    let total = node.value.cols();
                    let mut off = 0;
                    for &v in xs {
                        let c = self.dims(v).1;
                        let gv = acc(&mut grads, v, n * c);
                        for r in 0..n {
                            gv[r * c..(r + 1) * c]
                                .iter_mut()
                                .zip(&g[r * total + off..r * total + off + c])
                                .for_each(|(a, v)| *a += v);
                        }
                        off += c;
                    }
                }
                Op::Add { a, b } => {
                    for v in [*a, *b] {
                        acc(&mut grads, v, g.len()).iter_mut().zip(&g).for_each(|(x, y)| *x += y);
                    }
                }
                Op::Neg { x } => {
                    acc(&mut grads, *x, g.len()).iter_mut().zip(&g).for_each(|(x, y)| *x -= y);
                }
                Op::Mse { pred, target } => {
                    let p = self.value(*pred).data();
                    let n = p.len();
                    if n > 0 {
                        let k = 2.0 * g[0] / n as f64;
                        let gp = acc(&mut grads, *pred, n);
                        for ((a, &pi), &ti) in gp.iter_mut().zip(p).zip(target.data()) {
                            *a += k * (pi - ti);
                        }
                    }
                }
                Op::Sum { x } => {
                    let n = self.value(*x).len();
                    acc(&mut grads, *x, n).iter_mut().for_each(|a| *a += g[0]);
                }
                Op::WeightedSum { terms } => {
                    for &(v, w) in terms {
                        acc(&mut grads, v, 1)[0] += w * g[0];
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{FnKey, Role};

    #[test]
    fn linear_sum_gradient_is_outer_product_with_ones() {
        let mut store = ParameterStore::new();
        let f = FnKey::new(Role::Aux, 0, "lin");
        store.insert(f.weight(0), Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 0.1, 0.2, 0.3]).unwrap());
        store.insert(f.bias(0), Tensor::zeros(&[2]));
        let mut tape = Tape::new();
        let x = tape.constant(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let w = tape.param(&store, &f.weight(0)).unwrap();
        let b = tape.param(&store, &f.bias(0)).unwrap();
        let y = tape.linear(x, w, b).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(&f.weight(0)).unwrap().grad.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert_eq!(store.get(&f.bias(0)).unwrap().grad.data(), &[1.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut store = ParameterStore::new();
        let mut tape = Tape::new();
        let x = tape.constant(2, 2, vec![1.0; 4]).unwrap();
        let err = tape.backward(x, &mut store).unwrap_err();
        assert!(matches!(err, GpeError::Contract(_)));
    }

    #[test]
    fn scatter_accumulates_in_entry_order_with_signs() {
        let mut store = ParameterStore::new();
        let mut tape = Tape::new();
        let x = tape.constant(2, 1, vec![1.0, 10.0]).unwrap();
        let entries = vec![
            ScatterEntry { dst: 0, src: 0, negate: false },
            ScatterEntry { dst: 1, src: 0, negate: true },
            ScatterEntry { dst: 1, src: 1, negate: false },
        ];
        let y = tape.scatter(x, 3, entries).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 9.0, 0.0]);
        let loss = tape.mse(y, Tensor::zeros(&[3])).unwrap();
        tape.backward(loss, &mut store).unwrap();
    }

    #[test]
    fn prelu_matches_definition() {
        let mut store = ParameterStore::new();
        let f = FnKey::new(Role::Aux, 0, "p");
        store.insert(f.slope(0), Tensor::scalar(0.25));
        let mut tape = Tape::new();
        let x = tape.constant(1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        let a = tape.param(&store, &f.slope(0)).unwrap();
        let y = tape.prelu(x, a).unwrap();
        assert_eq!(tape.value(y).data(), &[-0.25, 0.0, 2.0]);
    }
}
