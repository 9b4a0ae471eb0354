//! Checkpoint files: a TOML manifest listing every tensor (key, buffer, shape,
//! byte offset) next to a little-endian `f64` blob.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::error::{GpeError, Result};
use crate::params::{ParamEntry, ParamKey, ParameterStore};
use crate::tensor::Tensor;

const FORMAT: &str = "gpe-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    blob: String,
    #[serde(default)]
    meta: BTreeMap<String, String>,
    #[serde(default, rename = "tensor")]
    tensors: Vec<TensorRecord>,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    key: String,
    buffer: String,
    shape: Vec<usize>,
    offset: u64,
}

/// Parameters (with Adam state) plus free-form string metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub store: ParameterStore,
    pub meta: BTreeMap<String, String>,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

impl Checkpoint {
    pub fn new(store: ParameterStore) -> Self {
        Checkpoint {
            store,
            meta: BTreeMap::new(),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    /// Writes `<path>` (manifest) and `<path>.bin` with the extension replaced.
    pub fn save(&self, path: &Path) -> Result<()> {
        let blob_file = blob_path(path);
        let mut blob: Vec<u8> = Vec::new();
        let mut tensors = Vec::new();
        for (key, entry) in self.store.iter() {
            for (buffer, t) in [("value", &entry.value), ("adam_m", &entry.adam_m), ("adam_v", &entry.adam_v)] {
                let offset = blob.len() as u64;
                let start = blob.len();
                blob.resize(start + 8 * t.len(), 0);
                LittleEndian::write_f64_into(t.data(), &mut blob[start..]);
                tensors.push(TensorRecord {
                    key: key.to_string(),
                    buffer: buffer.to_string(),
                    shape: t.shape().to_vec(),
                    offset,
                });
            }
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            blob: blob_file
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            meta: self.meta.clone(),
            tensors,
        };
        let text = toml::to_string(&manifest)
            .map_err(|e| GpeError::integrity(path, "manifest", e.to_string()))?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| GpeError::io(dir, e))?;
        }
        fs::write(&blob_file, &blob).map_err(|e| GpeError::io(&blob_file, e))?;
        fs::write(path, text).map_err(|e| GpeError::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GpeError::io(path, e))?;
        let manifest: Manifest =
            toml::from_str(&text).map_err(|e| GpeError::integrity(path, "manifest", e.to_string()))?;
        if manifest.format != FORMAT {
            return Err(GpeError::integrity(path, "format", format!("expected `{FORMAT}`, got `{}`", manifest.format)));
        }
        if manifest.version != VERSION {
            return Err(GpeError::integrity(path, "version", format!("unsupported version {}", manifest.version)));
        }
        let blob_file = path
            .parent()
            .map(|d| d.join(&manifest.blob))
            .unwrap_or_else(|| PathBuf::from(&manifest.blob));
        let blob = fs::read(&blob_file).map_err(|e| GpeError::io(&blob_file, e))?;

        let mut partial: BTreeMap<ParamKey, [Option<Tensor>; 3]> = BTreeMap::new();
        for rec in &manifest.tensors {
            let key: ParamKey = rec
                .key
                .parse()
                .map_err(|_| GpeError::integrity(path, "tensor.key", format!("malformed key `{}`", rec.key)))?;
            let n: usize = rec.shape.iter().product();
            let start = rec.offset as usize;
            let end = start + 8 * n;
            if end > blob.len() {
                return Err(GpeError::integrity(
                    &blob_file,
                    format!("{}:{}", rec.key, rec.buffer),
                    format!("range {start}..{end} exceeds blob size {}", blob.len()),
                ));
            }
            let mut data = vec![0.0; n];
            LittleEndian::read_f64_into(&blob[start..end], &mut data);
            let t = Tensor::new(rec.shape.clone(), data)
                .map_err(|e| GpeError::integrity(path, "tensor.shape", e.to_string()))?;
            let slot = match rec.buffer.as_str() {
                "value" => 0,
                "adam_m" => 1,
                "adam_v" => 2,
                other => return Err(GpeError::integrity(path, "tensor.buffer", format!("unknown buffer `{other}`"))),
            };
            partial.entry(key).or_default()[slot] = Some(t);
        }

        let mut store = ParameterStore::new();
        for (key, [value, m, v]) in partial {
            let value = value.ok_or_else(|| GpeError::integrity(path, format!("{key}:value"), "missing"))?;
            let shape = value.shape().to_vec();
            let entry = ParamEntry {
                grad: Tensor::zeros(&shape),
                adam_m: m.unwrap_or_else(|| Tensor::zeros(&shape)),
                adam_v: v.unwrap_or_else(|| Tensor::zeros(&shape)),
                value,
            };
            store
                .insert_entry(key.clone(), entry)
                .map_err(|e| GpeError::integrity(path, key.to_string(), e.to_string()))?;
        }
        Ok(Checkpoint {
            store,
            meta: manifest.meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{FnKey, Role};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParameterStore::new();
        let f = FnKey::new(Role::EdgeProcessor, 2, "boundary+m0");
        store.init_mlp(&f, &[5, 7, 3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for (_, e) in store.iter_mut() {
            let n = e.value.len();
            e.adam_m = Tensor::new(e.value.shape().to_vec(), (0..n).map(|i| 1.0 / (i as f64 + 3.0)).collect()).unwrap();
            e.adam_v = Tensor::new(e.value.shape().to_vec(), (0..n).map(|i| (i as f64).sqrt() * 1e-7).collect()).unwrap();
        }
        let mut ck = Checkpoint::new(store);
        ck.meta.insert("step".into(), "17".into());
        let path = dir.path().join("sub/model.toml");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        for ((_, a), (_, b)) in back.store.iter().zip(ck.store.iter()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
            assert_eq!(bits(&a.adam_v), bits(&b.adam_v));
        }
    }

    #[test]
    fn truncated_blob_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParameterStore::new();
        store.insert(FnKey::new(Role::Aux, 0, "x").bias(0), Tensor::vector(vec![1.0, 2.0]));
        let path = dir.path().join("m.toml");
        Checkpoint::new(store).save(&path).unwrap();
        fs::write(dir.path().join("m.bin"), [0u8; 8]).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(matches!(err, GpeError::Integrity { .. }), "{err}");
        assert_eq!(err.exit_code(), 3);
    }
}
