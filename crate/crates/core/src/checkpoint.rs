//! Binary checkpoints.
//!
//! Layout (little-endian): magic `ALFF`, `u32` version, a length-prefixed
//! metadata string of `key=value` lines, a `u32` record count, then records of
//! `(u32 name length, name, u32 ndim, ndim x u32 dims, u64 count, count x f64)`.

use std::fs;
use std::path::Path;

use crate::detector::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::Parameterized;

pub const MAGIC: &[u8; 4] = b"ALFF";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: u64,
    pub step: u64,
    pub seed: u64,
    pub model: Model,
    /// Optimizer velocity, shaped like the model.
    pub momentum: Model,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(format!("bad utf-8: {e}")))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn new(epoch: u64, step: u64, seed: u64, model: Model, momentum: Model) -> Self {
        Self {
            epoch,
            step,
            seed,
            model,
            momentum,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta = format!(
            "epoch={}\nstep={}\nseed={}\n{}",
            self.epoch,
            self.step,
            self.seed,
            self.model.config.to_text()
        );
        put_str(&mut out, &meta);
        let params = self.model.params();
        let moments = self.momentum.params();
        out.extend_from_slice(&((params.len() + moments.len()) as u32).to_le_bytes());
        let records = params
            .iter()
            .map(|p| (p.name.clone(), p))
            .chain(moments.iter().map(|p| (format!("momentum.{}", p.name), p)));
        for (name, p) in records {
            put_str(&mut out, &name);
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for d in &p.shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            out.extend_from_slice(&(p.data.len() as u64).to_le_bytes());
            for v in p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("missing ALFF magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: VERSION,
            });
        }
        let meta = r.string()?;
        let mut counters = [None; 3];
        let mut model_text = String::new();
        for line in meta.lines() {
            let slot = match line.split_once('=') {
                Some(("epoch", v)) => Some((0, v)),
                Some(("step", v)) => Some((1, v)),
                Some(("seed", v)) => Some((2, v)),
                _ => None,
            };
            match slot {
                Some((i, v)) => {
                    counters[i] = Some(
                        v.parse::<u64>()
                            .map_err(|e| Error::Checkpoint(format!("metadata {line:?}: {e}")))?,
                    )
                }
                None => {
                    model_text.push_str(line);
                    model_text.push('\n');
                }
            }
        }
        let [epoch, step, seed] = counters.map(|c| c.ok_or_else(|| Error::Checkpoint("incomplete metadata".into())));
        let config = ModelConfig::from_text(&model_text)?;
        let mut model = Model::new(config, 0);
        let mut momentum = model.zeros_like();

        let expected: Vec<(String, Vec<usize>)> = model
            .params()
            .iter()
            .map(|p| (p.name.clone(), p.shape.clone()))
            .collect();
        let n = r.u32()? as usize;
        if n != 2 * expected.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} records, found {n}",
                2 * expected.len()
            )));
        }
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(n);
        for k in 0..n {
            let (base, shape) = &expected[k % expected.len()];
            let want = if k < expected.len() {
                base.clone()
            } else {
                format!("momentum.{base}")
            };
            let name = r.string()?;
            if name != want {
                return Err(Error::Checkpoint(format!("record {k}: expected {want:?}, found {name:?}")));
            }
            let ndim = r.u32()? as usize;
            let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if &dims != shape {
                return Err(Error::Checkpoint(format!("{name}: shape {dims:?}, expected {shape:?}")));
            }
            let count = r.u64()? as usize;
            if count != shape.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!("{name}: {count} values for shape {shape:?}")));
            }
            let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            values.push(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            );
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let (mv, vv) = values.split_at(expected.len());
        for (dst, src) in model.params_mut().into_iter().zip(mv) {
            dst.copy_from_slice(src);
        }
        for (dst, src) in momentum.params_mut().into_iter().zip(vv) {
            dst.copy_from_slice(src);
        }
        Ok(Self {
            epoch: epoch?,
            step: step?,
            seed: seed?,
            model,
            momentum,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
