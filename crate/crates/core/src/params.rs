//! Learnable parameters keyed by the network function they belong to.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{GpeError, Result};
use crate::tensor::Tensor;

/// Which of the five learnable function families a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    NodeEncoder,
    EdgeEncoder,
    EdgeProcessor,
    NodeProcessor,
    NodeDecoder,
    /// Free-standing MLPs outside the engine (tests, utilities).
    Aux,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::NodeEncoder,
        Role::EdgeEncoder,
        Role::EdgeProcessor,
        Role::NodeProcessor,
        Role::NodeDecoder,
        Role::Aux,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::NodeEncoder => "node_encoder",
            Role::EdgeEncoder => "edge_encoder",
            Role::EdgeProcessor => "edge_processor",
            Role::NodeProcessor => "node_processor",
            Role::NodeDecoder => "node_decoder",
            Role::Aux => "aux",
        }
    }
}

impl FromStr for Role {
    type Err = GpeError;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| GpeError::Input(format!("unknown parameter role `{s}`")))
    }
}

/// Identifies one learnable function: role, message-passing round and type tag.
///
/// Type tags are a node type (`m0`, `boundary`, `virtual`) for node functions and
/// an order-normalized pair (`boundary+m0`) for edge functions.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FnKey {
    pub role: Role,
    pub round: usize,
    pub tag: String,
}

impl FnKey {
    pub fn new(role: Role, round: usize, tag: impl Into<String>) -> Self {
        FnKey {
            role,
            round,
            tag: tag.into(),
        }
    }

    pub fn weight(&self, layer: usize) -> ParamKey {
        ParamKey::new(self.clone(), Slot::Weight(layer))
    }

    pub fn bias(&self, layer: usize) -> ParamKey {
        ParamKey::new(self.clone(), Slot::Bias(layer))
    }

    pub fn slope(&self, layer: usize) -> ParamKey {
        ParamKey::new(self.clone(), Slot::Slope(layer))
    }
}

impl fmt::Display for FnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.role.as_str(), self.round, self.tag)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Weight(usize),
    Bias(usize),
    Slope(usize),
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Weight(l) => write!(f, "w{l}"),
            Slot::Bias(l) => write!(f, "b{l}"),
            Slot::Slope(l) => write!(f, "a{l}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey {
    pub func: FnKey,
    pub slot: Slot,
}

impl ParamKey {
    pub fn new(func: FnKey, slot: Slot) -> Self {
        ParamKey { func, slot }
    }
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.func, self.slot)
    }
}

impl FromStr for ParamKey {
    type Err = GpeError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || GpeError::Input(format!("malformed parameter key `{s}`"));
        let parts: Vec<&str> = s.split('/').collect();
        let [role, round, tag, slot] = parts[..] else {
            return Err(bad());
        };
        let role: Role = role.parse()?;
        let round: usize = round.parse().map_err(|_| bad())?;
        if tag.is_empty() || slot.len() < 2 {
            return Err(bad());
        }
        let layer: usize = slot[1..].parse().map_err(|_| bad())?;
        let slot = match &slot[..1] {
            "w" => Slot::Weight(layer),
            "b" => Slot::Bias(layer),
            "a" => Slot::Slope(layer),
            _ => return Err(bad()),
        };
        Ok(ParamKey::new(FnKey::new(role, round, tag), slot))
    }
}

/// Value plus gradient and Adam moment buffers for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
}

impl ParamEntry {
    pub fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        ParamEntry {
            value,
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<ParamKey, ParamEntry>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: ParamKey, value: Tensor) {
        self.entries.insert(key, ParamEntry::new(value));
    }

    pub fn insert_entry(&mut self, key: ParamKey, entry: ParamEntry) -> Result<()> {
        let shape = entry.value.shape();
        for (name, t) in [("grad", &entry.grad), ("adam_m", &entry.adam_m), ("adam_v", &entry.adam_v)] {
            if t.shape() != shape {
                return Err(GpeError::dim(
                    format!("{key}:{name}"),
                    format!("{shape:?}"),
                    format!("{:?}", t.shape()),
                ));
            }
        }
        self.entries.insert(key, entry);
        Ok(())
    }

    pub fn get(&self, key: &ParamKey) -> Result<&ParamEntry> {
        self.entries
            .get(key)
            .ok_or_else(|| GpeError::Config(format!("missing parameter `{key}`")))
    }

    pub fn get_mut(&mut self, key: &ParamKey) -> Result<&mut ParamEntry> {
        self.entries
            .get_mut(key)
            .ok_or_else(|| GpeError::Config(format!("missing parameter `{key}`")))
    }

    pub fn value(&self, key: &ParamKey) -> Result<&Tensor> {
        Ok(&self.get(key)?.value)
    }

    pub fn contains(&self, key: &ParamKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn has_function(&self, func: &FnKey) -> bool {
        self.entries.contains_key(&func.weight(0))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&ParamKey, &mut ParamEntry)> {
        self.entries.iter_mut()
    }

    pub fn keys(&self) -> impl Iterator<Item = &ParamKey> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.fill(0.0);
        }
    }

    /// Adds another store's gradients into this one (data-parallel accumulation).
    pub fn accumulate_grads(&mut self, other: &ParameterStore) -> Result<()> {
        for (k, e) in other.iter() {
            let mine = self.get_mut(k)?;
            if mine.grad.shape() != e.grad.shape() {
                return Err(GpeError::dim(k.to_string(), format!("{:?}", mine.grad.shape()), format!("{:?}", e.grad.shape())));
            }
            mine.grad.add_assign(&e.grad);
        }
        Ok(())
    }

    /// Registers a fresh MLP: uniform Glorot weights, zero biases, PReLU slopes 0.25.
    pub fn init_mlp<R: Rng + ?Sized>(&mut self, func: &FnKey, dims: &[usize], rng: &mut R) -> Result<()> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(GpeError::Config(format!("MLP `{func}` needs at least two positive dims, got {dims:?}")));
        }
        let layers = dims.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            self.insert(func.weight(l), Tensor::matrix(fan_out, fan_in, w)?);
            self.insert(func.bias(l), Tensor::zeros(&[fan_out]));
            if l + 1 < layers {
                self.insert(func.slope(l), Tensor::scalar(0.25));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn key_round_trips_through_text() {
        let k = FnKey::new(Role::EdgeProcessor, 3, "boundary+m0").slope(0);
        let parsed: ParamKey = k.to_string().parse().unwrap();
        assert_eq!(parsed, k);
        assert!("edge_processor/x/m0/w0".parse::<ParamKey>().is_err());
        assert!("bogus/0/m0/w0".parse::<ParamKey>().is_err());
    }

    #[test]
    fn init_mlp_respects_glorot_bound() {
        let mut store = ParameterStore::new();
        let f = FnKey::new(Role::Aux, 0, "t");
        store
            .init_mlp(&f, &[4, 8, 3], &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let w0 = store.value(&f.weight(0)).unwrap();
        assert_eq!(w0.shape(), &[8, 4]);
        let bound = (6.0f64 / 12.0).sqrt();
        assert!(w0.data().iter().all(|v| v.abs() <= bound));
        assert_eq!(store.value(&f.slope(0)).unwrap().data(), &[0.25]);
        assert!(!store.contains(&f.slope(1)));
        assert_eq!(store.num_scalars(), 8 * 4 + 8 + 1 + 3 * 8 + 3);
    }
}
