//! Multi-layer perceptrons with PReLU activations on every hidden layer.

use crate::error::{GpeError, Result};
use crate::params::{FnKey, ParameterStore};
use crate::tape::{Tape, Var};

/// Handle to an MLP whose weights live in a [`ParameterStore`] under `func`.
///
/// `dims = [in, hidden.., out]`; the final layer is affine with no activation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub func: FnKey,
    pub dims: Vec<usize>,
}

impl Mlp {
    pub fn new(func: FnKey, dims: Vec<usize>) -> Self {
        Mlp { func, dims }
    }

    /// The standard two-layer shape `in → hidden → out`.
    pub fn two_layer(func: FnKey, input: usize, hidden: usize, output: usize) -> Self {
        Mlp::new(func, vec![input, hidden, output])
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Applies the MLP row-wise to `x` (`n × in`), recording every op on `tape`.
    pub fn forward(&self, store: &ParameterStore, tape: &mut Tape, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.input_dim() {
            return Err(GpeError::dim(self.func.weight(0).to_string(), self.input_dim(), cols));
        }
        let mut h = x;
        for l in 0..self.layers() {
            let wk = self.func.weight(l);
            let expect = [self.dims[l + 1], self.dims[l]];
            let got = store.value(&wk)?.shape();
            if got != expect {
                return Err(GpeError::dim(wk.to_string(), format!("{expect:?}"), format!("{got:?}")));
            }
            let w = tape.param(store, &wk)?;
            let b = tape.param(store, &self.func.bias(l))?;
            h = tape.linear(h, w, b)?;
            if l + 1 < self.layers() {
                let a = tape.param(store, &self.func.slope(l))?;
                h = tape.prelu(h, a)?;
            }
        }
        Ok(h)
    }

    /// Evaluates a single input vector without keeping the tape.
    pub fn eval(&self, store: &ParameterStore, x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let xv = tape.constant(1, x.len(), x.to_vec())?;
        let y = self.forward(store, &mut tape, xv)?;
        Ok(tape.value(y).data().to_vec())
    }
}
