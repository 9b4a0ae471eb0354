//! Dataset generation and the TOML manifest that indexes trajectory files.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GpeError, Result};
use crate::sims::{param_range, simulate, SimSpec};
use crate::trajectory::{SystemKind, Trajectory};

const FORMAT: &str = "gpe-manifest";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    ValUnseen,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Test, Split::ValUnseen];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::ValUnseen => "val_unseen",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| GpeError::Input(format!("unknown split `{s}` (valid: train, test, val_unseen)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub split: Split,
    pub param: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub system: SystemKind,
    pub param_min: f64,
    pub param_max: f64,
    pub root_seed: u64,
    /// Simulation settings shared by every trajectory (param and seed vary).
    pub spec: SimSpec,
    #[serde(default, rename = "trajectory")]
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub dir: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GpeError::io(path, e))?;
        let mut m: Manifest =
            toml::from_str(&text).map_err(|e| GpeError::integrity(path, "manifest", e.message().to_string()))?;
        if m.format != FORMAT {
            return Err(GpeError::integrity(path, "format", format!("expected `{FORMAT}`, got `{}`", m.format)));
        }
        if m.version != VERSION {
            return Err(GpeError::integrity(path, "version", format!("unsupported version {}", m.version)));
        }
        if !(m.param_min < m.param_max) {
            return Err(GpeError::integrity(path, "param_min", "param_min must be below param_max"));
        }
        m.dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| GpeError::integrity(path, "manifest", e.to_string()))?;
        fs::write(path, text).map_err(|e| GpeError::io(path, e))
    }

    pub fn param_range(&self) -> (f64, f64) {
        (self.param_min, self.param_max)
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn params(&self, split: Split) -> Vec<f64> {
        let mut v: Vec<f64> = self.entries(split).map(|e| e.param).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.dir.join(&entry.path)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Trajectory>> {
        self.entries(split).map(|e| Trajectory::load(&self.resolve(e))).collect()
    }
}

/// Which parameters go into which split, and how many trajectories each gets.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetPlan {
    pub train_params: Vec<f64>,
    pub unseen_params: Vec<f64>,
    /// Trajectories per train param (train split) and per unseen param.
    pub per_param: usize,
    /// Extra held-out trajectories per train param (test split).
    pub test_per_param: usize,
}

impl DatasetPlan {
    pub fn train_only(params: Vec<f64>, per_param: usize) -> Self {
        DatasetPlan {
            train_params: params,
            unseen_params: Vec::new(),
            per_param,
            test_per_param: 0,
        }
    }

    /// Train params on a uniform grid over `range` with unseen params at the
    /// off-grid midpoints plus one point beyond each end.
    pub fn uniform(range: (f64, f64), n_train: usize, per_param: usize, test_per_param: usize) -> Self {
        let (lo, hi) = range;
        let step = (hi - lo) / n_train as f64;
        let train: Vec<f64> = (0..n_train).map(|i| lo + step * (i as f64 + 0.5)).collect();
        let mut unseen: Vec<f64> = train.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        unseen.push(lo + 0.25 * step);
        unseen.push(hi - 0.25 * step);
        unseen.sort_by(f64::total_cmp);
        DatasetPlan {
            train_params: train,
            unseen_params: unseen,
            per_param,
            test_per_param,
        }
    }

    pub fn validate(&self, system: SystemKind) -> Result<()> {
        if self.train_params.is_empty() && self.unseen_params.is_empty() {
            return Err(GpeError::Input("no parameter values given".into()));
        }
        if self.per_param == 0 && self.test_per_param == 0 {
            return Err(GpeError::Input("trajectories per parameter must be >= 1".into()));
        }
        let (lo, hi) = param_range(system);
        for &p in self.train_params.iter().chain(&self.unseen_params) {
            if !(p >= lo && p <= hi) {
                return Err(GpeError::Input(format!(
                    "parameter {p} outside the {} range [{lo}, {hi}]",
                    system.as_str()
                )));
            }
        }
        let train: BTreeSet<u64> = self.train_params.iter().map(|p| p.to_bits()).collect();
        if let Some(p) = self.unseen_params.iter().find(|p| train.contains(&p.to_bits())) {
            return Err(GpeError::Input(format!("unseen parameter {p} also appears in the train set")));
        }
        Ok(())
    }

    /// `(split, param)` per trajectory in generation order.
    pub fn jobs(&self) -> Vec<(Split, f64)> {
        let mut jobs = Vec::new();
        for &p in &self.train_params {
            jobs.extend(std::iter::repeat((Split::Train, p)).take(self.per_param));
        }
        for &p in &self.train_params {
            jobs.extend(std::iter::repeat((Split::Test, p)).take(self.test_per_param));
        }
        for &p in &self.unseen_params {
            jobs.extend(std::iter::repeat((Split::ValUnseen, p)).take(self.per_param));
        }
        jobs
    }
}

/// Simulates every planned trajectory (seed = `template.seed + index`) and
/// writes the files plus `manifest.toml` into `out_dir`.
pub fn generate_dataset(template: &SimSpec, plan: &DatasetPlan, out_dir: &Path) -> Result<(PathBuf, Manifest)> {
    plan.validate(template.system)?;
    fs::create_dir_all(out_dir).map_err(|e| GpeError::io(out_dir, e))?;
    let (param_min, param_max) = param_range(template.system);
    let mut entries = Vec::new();
    for (index, (split, param)) in plan.jobs().into_iter().enumerate() {
        let mut spec = template.clone();
        spec.param = param;
        spec.seed = template.seed.wrapping_add(index as u64);
        let traj = simulate(&spec)?;
        let name = format!("{}_{index:04}.gpet", split.as_str());
        traj.save(&out_dir.join(&name))?;
        entries.push(ManifestEntry {
            path: name,
            split,
            param,
            seed: spec.seed,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        system: template.system,
        param_min,
        param_max,
        root_seed: template.seed,
        spec: template.clone(),
        entries,
        dir: out_dir.to_path_buf(),
    };
    let path = out_dir.join("manifest.toml");
    manifest.save(&path)?;
    Ok((path, manifest))
}
