//! Trained model files.
//!
//! The binary file holds only shapes and parameter arrays, little-endian:
//!
//! ```text
//! b"FCGN"  u32 version (=1)  u8 kind (0 ocgin, 1 glocalkd)  3 pad bytes
//! u32 tensor count
//! per tensor: u32 rows, u32 cols, rows·cols f64 values (row-major)
//! ```
//!
//! Tensors appear in [`GineModel::params`] order: OCGIN writes the model
//! then the centre; GlocalKD writes the teacher then the student. A JSON
//! sidecar at `<path>.json` records the dimensions, λ and training log.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GineLayer, GineModel, GlocalState, OcginState, TrainLog};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FCGN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Ocgin(OcginState),
    Glocal(GlocalState),
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    model: String,
    node_dim: usize,
    edge_dim: usize,
    hidden: usize,
    layers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    log: TrainLog,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn push_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    buf.extend_from_slice(&(t.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(t.cols() as u32).to_le_bytes());
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let (kind, tensors, sidecar) = match checkpoint {
        Checkpoint::Ocgin(s) => {
            let mut ts = s.model.params();
            ts.push(&s.center);
            (0u8, ts, sidecar_for("ocgin", &s.model, None, &s.log))
        }
        Checkpoint::Glocal(s) => {
            let mut ts = s.teacher.params();
            ts.extend(s.student.params());
            (1u8, ts, sidecar_for("glocalkd", &s.student, Some(s.lambda), &s.log))
        }
    };
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&[kind, 0, 0, 0]);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        push_tensor(&mut buf, t);
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serialises");
    let side = sidecar_path(path);
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

fn sidecar_for(model: &str, m: &GineModel, lambda: Option<f64>, log: &TrainLog) -> Sidecar {
    Sidecar {
        model: model.into(),
        node_dim: m.node_dim,
        edge_dim: m.edge_dim,
        hidden: m.hidden,
        layers: m.layers.len(),
        lambda,
        log: log.clone(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        let out = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Archive(format!("checkpoint truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let data = self
            .take(rows * cols * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(rows, cols, data)
    }
}

fn model_from(side: &Sidecar, tensors: &mut impl Iterator<Item = Tensor>) -> Result<GineModel> {
    let mut layers = Vec::with_capacity(side.layers);
    for l in 0..side.layers {
        let d_in = if l == 0 { side.node_dim } else { side.hidden };
        let mut next = |shape: (usize, usize)| {
            let t = tensors
                .next()
                .ok_or_else(|| Error::Archive("checkpoint has too few tensors".into()))?;
            if t.shape() != shape {
                return Err(Error::Archive(format!(
                    "layer {l}: tensor shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        layers.push(GineLayer {
            epsilon: next((1, 1))?,
            edge_proj: next((side.edge_dim, d_in))?,
            w1: next((d_in, side.hidden))?,
            w2: next((side.hidden, side.hidden))?,
        });
    }
    Ok(GineModel {
        node_dim: side.node_dim,
        edge_dim: side.edge_dim,
        hidden: side.hidden,
        layers,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let side_path = sidecar_path(path);
    let side_text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let side: Sidecar = serde_json::from_str(&side_text)
        .map_err(|e| Error::Archive(format!("{}: {e}", side_path.display())))?;

    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Archive(format!("{}: not a model checkpoint", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Archive(format!("unsupported checkpoint version {version}")));
    }
    let kind = r.take(4)?[0];
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        tensors.push(r.tensor()?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Archive("trailing bytes after checkpoint tensors".into()));
    }
    let mut it = tensors.into_iter();
    let checkpoint = match (kind, side.model.as_str()) {
        (0, "ocgin") => {
            let model = model_from(&side, &mut it)?;
            let center = it
                .next()
                .ok_or_else(|| Error::Archive("missing OCGIN centre".into()))?;
            if center.shape() != (1, model.embedding_dim()) {
                return Err(Error::Archive("OCGIN centre has the wrong length".into()));
            }
            Checkpoint::Ocgin(OcginState {
                model,
                center,
                log: side.log.clone(),
            })
        }
        (1, "glocalkd") => Checkpoint::Glocal(GlocalState {
            teacher: model_from(&side, &mut it)?,
            student: model_from(&side, &mut it)?,
            lambda: side
                .lambda
                .ok_or_else(|| Error::Archive("GlocalKD sidecar lacks lambda".into()))?,
            log: side.log.clone(),
        }),
        (k, m) => {
            return Err(Error::Archive(format!(
                "checkpoint kind {k} does not match sidecar model `{m}`"
            )))
        }
    };
    if it.next().is_some() {
        return Err(Error::Archive("checkpoint has too many tensors".into()));
    }
    Ok(checkpoint)
}
