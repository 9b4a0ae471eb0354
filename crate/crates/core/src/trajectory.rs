//! Trajectories and the binary `GPET` file format.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "GPET" | u32 version | u32 dim | u32 nodes | u32 frames | f64 dt | f64 param
//! | f64 param_min | f64 param_max | u8 system | f64 gravity[dim]
//! | u32 grid_x | u32 grid_y
//! | nodes × (u8 tag, u32 type_id_or_level, f64 param)
//! | frames × nodes × dim f64 positions
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{GpeError, Result};
use crate::graph::{MeshTopology, NodeKind};

pub const MAGIC: &[u8; 4] = b"GPET";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    ViscousBlob,
    ElasticSheet,
}

impl SystemKind {
    pub const ALL: [SystemKind; 2] = [SystemKind::ViscousBlob, SystemKind::ElasticSheet];

    pub fn as_str(self) -> &'static str {
        match self {
            SystemKind::ViscousBlob => "viscous_blob",
            SystemKind::ElasticSheet => "elastic_sheet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        SystemKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| GpeError::Input(format!("unknown system `{s}` (valid: viscous_blob, elastic_sheet)")))
    }

    fn code(self) -> u8 {
        match self {
            SystemKind::ViscousBlob => 0,
            SystemKind::ElasticSheet => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(SystemKind::ViscousBlob),
            1 => Some(SystemKind::ElasticSheet),
            _ => None,
        }
    }

    pub fn is_mesh(self) -> bool {
        self == SystemKind::ElasticSheet
    }
}

/// Time-ordered frames of node positions plus static metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub dt: f64,
    pub param: f64,
    pub param_range: (f64, f64),
    pub system: Option<SystemKind>,
    pub gravity: Vec<f64>,
    /// Cell grid for mesh systems; mesh vertices come first in node order.
    pub grid_dims: Option<[usize; 2]>,
    pub kinds: Vec<NodeKind>,
    /// `frames × nodes × dim`.
    pub frames: Vec<f64>,
}

impl Trajectory {
    pub fn num_nodes(&self) -> usize {
        self.kinds.len()
    }

    pub fn num_frames(&self) -> usize {
        let w = self.num_nodes() * self.dim;
        if w == 0 {
            0
        } else {
            self.frames.len() / w
        }
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let w = self.num_nodes() * self.dim;
        &self.frames[t * w..(t + 1) * w]
    }

    pub fn mesh(&self) -> Result<Option<MeshTopology>> {
        self.grid_dims.map(|[x, y]| MeshTopology::grid(x, y)).transpose()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(GpeError::Input(format!("trajectory dim must be 2 or 3, got {}", self.dim)));
        }
        let w = self.num_nodes() * self.dim;
        if w == 0 || self.frames.len() % w != 0 {
            return Err(GpeError::Input("frame buffer does not divide into whole frames".into()));
        }
        if self.num_frames() < 3 {
            return Err(GpeError::Input(format!("trajectory needs at least 3 frames, has {}", self.num_frames())));
        }
        if self.gravity.len() != self.dim {
            return Err(GpeError::dim("gravity", self.dim, self.gravity.len()));
        }
        if let Some(k) = self.frames.iter().position(|v| !v.is_finite()) {
            return Err(GpeError::Input(format!("non-finite position at flat index {k}")));
        }
        Ok(())
    }

    /// Finite-difference acceleration `(x⁺ − 2x + x⁻)/dt²` at frame `t` for every node.
    pub fn acceleration(&self, t: usize) -> Vec<f64> {
        let (prev, cur, next) = (self.frame(t - 1), self.frame(t), self.frame(t + 1));
        let inv = 1.0 / (self.dt * self.dt);
        cur.iter()
            .zip(prev)
            .zip(next)
            .map(|((c, p), n)| (n - 2.0 * c + p) * inv)
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(64 + self.kinds.len() * 13 + self.frames.len() * 8);
        b.extend_from_slice(MAGIC);
        let w = |b: &mut Vec<u8>, v: u32| b.write_u32::<LittleEndian>(v).unwrap();
        let f = |b: &mut Vec<u8>, v: f64| b.write_f64::<LittleEndian>(v).unwrap();
        w(&mut b, VERSION);
        w(&mut b, self.dim as u32);
        w(&mut b, self.num_nodes() as u32);
        w(&mut b, self.num_frames() as u32);
        f(&mut b, self.dt);
        f(&mut b, self.param);
        f(&mut b, self.param_range.0);
        f(&mut b, self.param_range.1);
        b.push(self.system.map(SystemKind::code).unwrap_or(255));
        for &g in &self.gravity {
            f(&mut b, g);
        }
        let [gx, gy] = self.grid_dims.unwrap_or([0, 0]);
        w(&mut b, gx as u32);
        w(&mut b, gy as u32);
        for k in &self.kinds {
            let (tag, a, p) = match *k {
                NodeKind::Material { type_id, param } => (0u8, type_id, param),
                NodeKind::Boundary => (1, 0, 0.0),
                NodeKind::Virtual { level } => (2, level, 0.0),
            };
            b.push(tag);
            w(&mut b, a);
            f(&mut b, p);
        }
        for &v in &self.frames {
            f(&mut b, v);
        }
        b
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |field: &str, detail: String| GpeError::integrity(origin, field, detail);
        let trunc = |field: &'static str| move |e: std::io::Error| GpeError::integrity(origin, field, e.to_string());
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(trunc("magic"))?;
        if &magic != MAGIC {
            return Err(bad("magic", format!("expected GPET, got {magic:?}")));
        }
        let version = r.read_u32::<LittleEndian>().map_err(trunc("version"))?;
        if version != VERSION {
            return Err(bad("version", format!("unsupported version {version}")));
        }
        let dim = r.read_u32::<LittleEndian>().map_err(trunc("dim"))? as usize;
        if dim != 2 && dim != 3 {
            return Err(bad("dim", format!("must be 2 or 3, got {dim}")));
        }
        let n = r.read_u32::<LittleEndian>().map_err(trunc("nodes"))? as usize;
        let t = r.read_u32::<LittleEndian>().map_err(trunc("frames"))? as usize;
        let dt = r.read_f64::<LittleEndian>().map_err(trunc("dt"))?;
        let param = r.read_f64::<LittleEndian>().map_err(trunc("param"))?;
        let lo = r.read_f64::<LittleEndian>().map_err(trunc("param_min"))?;
        let hi = r.read_f64::<LittleEndian>().map_err(trunc("param_max"))?;
        let code = r.read_u8().map_err(trunc("system"))?;
        let system = match code {
            255 => None,
            c => Some(SystemKind::from_code(c).ok_or_else(|| bad("system", format!("unknown code {c}")))?),
        };
        let mut gravity = vec![0.0; dim];
        r.read_f64_into::<LittleEndian>(&mut gravity).map_err(trunc("gravity"))?;
        let gx = r.read_u32::<LittleEndian>().map_err(trunc("grid"))? as usize;
        let gy = r.read_u32::<LittleEndian>().map_err(trunc("grid"))? as usize;
        let grid_dims = (gx > 0 && gy > 0).then_some([gx, gy]);
        let mut kinds = Vec::with_capacity(n);
        for _ in 0..n {
            let tag = r.read_u8().map_err(trunc("kinds"))?;
            let a = r.read_u32::<LittleEndian>().map_err(trunc("kinds"))?;
            let p = r.read_f64::<LittleEndian>().map_err(trunc("kinds"))?;
            kinds.push(match tag {
                0 => NodeKind::Material { type_id: a, param: p },
                1 => NodeKind::Boundary,
                2 => NodeKind::Virtual { level: a },
                x => return Err(bad("kinds", format!("unknown node tag {x}"))),
            });
        }
        let count = t * n * dim;
        let remaining = bytes.len() - r.position() as usize;
        if remaining != count * 8 {
            return Err(bad("frames", format!("expected {} bytes of frame data, found {remaining}", count * 8)));
        }
        let mut frames = vec![0.0; count];
        r.read_f64_into::<LittleEndian>(&mut frames).map_err(trunc("frames"))?;
        Ok(Trajectory {
            dim,
            dt,
            param,
            param_range: (lo, hi),
            system,
            gravity,
            grid_dims,
            kinds,
            frames,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| GpeError::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| GpeError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| GpeError::io(path, e))?;
        Trajectory::from_bytes(&bytes, path)
    }
}
