//! Flat `key = value` run configuration with override layering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::engine::EngineConfig;
use crate::error::{GpeError, Result};
use crate::sims::SimSpec;
use crate::training::TrainConfig;
use crate::trajectory::SystemKind;

pub const TRAIN_KEYS: &[&str] = &[
    "manifest",
    "steps",
    "batch",
    "noise_sigma",
    "lr_start",
    "lr_end",
    "seed",
    "val_every",
    "val_samples",
    "rounds",
    "hidden_dim",
    "mlp_layers",
    "history",
    "cutoff",
    "length_scale",
    "conserve_momentum",
];

pub const GENERATE_KEYS: &[&str] = &[
    "system",
    "params",
    "unseen_params",
    "per_param",
    "test_per_param",
    "n_particles",
    "grid",
    "frames",
    "dt",
    "substeps",
    "seed",
    "box_size",
    "gravity",
    "walls",
    "init_speed",
    "boundary_spacing",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlatConfig {
    entries: BTreeMap<String, String>,
}

impl FlatConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                GpeError::Config(format!("{}:{}: expected `key = value`", origin.display(), n + 1))
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(GpeError::Config(format!("{}:{}: empty key", origin.display(), n + 1)));
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(FlatConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GpeError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    /// Later layers win.
    pub fn merge(&mut self, other: &FlatConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        for k in self.entries.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(GpeError::Config(format!("unknown config key `{k}` (valid: {})", allowed.join(", "))));
            }
        }
        Ok(())
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| GpeError::Config(format!("invalid value `{v}` for `{key}`"))),
        }
    }

    fn apply<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.parsed(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Comma-separated reals.
    pub fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        if v.is_empty() {
            return Ok(Some(Vec::new()));
        }
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| GpeError::Config(format!("invalid number `{s}` in `{key}`")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Resolved snapshot in the same format `parse` reads.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        fs::write(path, self.snapshot()).map_err(|e| GpeError::io(path, e))
    }

    /// Training settings on top of the desk defaults.
    pub fn train_config(&self) -> Result<TrainConfig> {
        self.reject_unknown(TRAIN_KEYS)?;
        let mut c = TrainConfig::default();
        let manifest: Option<String> = self.parsed("manifest")?;
        c.manifest = manifest
            .map(PathBuf::from)
            .ok_or_else(|| GpeError::Config("`manifest` is required".into()))?;
        self.apply("steps", &mut c.steps)?;
        self.apply("batch", &mut c.batch)?;
        self.apply("noise_sigma", &mut c.noise_sigma)?;
        self.apply("lr_start", &mut c.lr_start)?;
        self.apply("lr_end", &mut c.lr_end)?;
        self.apply("seed", &mut c.seed)?;
        self.apply("val_every", &mut c.val_every)?;
        self.apply("val_samples", &mut c.val_samples)?;
        let e: &mut EngineConfig = &mut c.engine;
        self.apply("rounds", &mut e.rounds)?;
        self.apply("hidden_dim", &mut e.hidden_dim)?;
        self.apply("mlp_layers", &mut e.mlp_layers)?;
        self.apply("history", &mut e.history)?;
        self.apply("cutoff", &mut e.cutoff)?;
        self.apply("length_scale", &mut e.length_scale)?;
        self.apply("conserve_momentum", &mut e.conserve_momentum)?;
        c.validate()?;
        Ok(c)
    }

    /// Every training key with its effective value, for snapshots.
    pub fn from_train_config(c: &TrainConfig) -> Self {
        let mut f = FlatConfig::new();
        f.set("manifest", c.manifest.display());
        f.set("steps", c.steps);
        f.set("batch", c.batch);
        f.set("noise_sigma", format!("{:?}", c.noise_sigma));
        f.set("lr_start", format!("{:?}", c.lr_start));
        f.set("lr_end", format!("{:?}", c.lr_end));
        f.set("seed", c.seed);
        f.set("val_every", c.val_every);
        f.set("val_samples", c.val_samples);
        f.set("rounds", c.engine.rounds);
        f.set("hidden_dim", c.engine.hidden_dim);
        f.set("mlp_layers", c.engine.mlp_layers);
        f.set("history", c.engine.history);
        f.set("cutoff", format!("{:?}", c.engine.cutoff));
        f.set("length_scale", format!("{:?}", c.engine.length_scale));
        f.set("conserve_momentum", c.engine.conserve_momentum);
        f
    }

    /// Simulation template for dataset generation (`system` is required).
    pub fn sim_spec(&self) -> Result<SimSpec> {
        let system = self
            .get("system")
            .ok_or_else(|| GpeError::Config("`system` is required (valid: viscous_blob, elastic_sheet)".into()))?;
        let system = SystemKind::parse(system).map_err(|e| GpeError::Config(e.to_string()))?;
        let mut s = match system {
            SystemKind::ViscousBlob => SimSpec::viscous_blob(1.0, 0),
            SystemKind::ElasticSheet => SimSpec::elastic_sheet(100.0, 0),
        };
        self.apply("n_particles", &mut s.n_particles)?;
        if let Some(g) = self.get("grid") {
            let (x, y) = g
                .split_once('x')
                .ok_or_else(|| GpeError::Config(format!("invalid grid `{g}`, expected e.g. 4x4")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| GpeError::Config(format!("invalid grid `{g}`")))
            };
            s.grid_dims = [parse(x)?, parse(y)?];
        }
        self.apply("frames", &mut s.frames)?;
        self.apply("dt", &mut s.dt)?;
        self.apply("substeps", &mut s.substeps)?;
        self.apply("seed", &mut s.seed)?;
        self.apply("box_size", &mut s.box_size)?;
        self.apply("gravity", &mut s.gravity)?;
        self.apply("walls", &mut s.walls)?;
        self.apply("init_speed", &mut s.init_speed)?;
        self.apply("boundary_spacing", &mut s.boundary_spacing)?;
        Ok(s)
    }
}
