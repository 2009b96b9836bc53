//! Binary checkpoint format.
//!
//! Layout: the magic bytes `PMDP1`, then for every tensor in ascending name
//! order: `u32` name length, UTF-8 name, `u32` ndim, `u32` dims, and the
//! row-major values as little-endian `f64`. All integers are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::SubspaceNormTracker;
use crate::model::{Model, ModelConfig, ModelParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"PMDP1";

/// Tensor name used to persist the subspace-norm averages.
pub const TRACKER_KEY: &str = "tracker.mean_norm";

pub fn write_tensors<W: Write>(mut w: W, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut sorted: Vec<&(String, Tensor)> = tensors.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    w.write_all(MAGIC)?;
    for (name, t) in sorted {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= buf.len())
        .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
    let out = &buf[*pos..end];
    *pos = end;
    Ok(out)
}

fn take_u32(buf: &[u8], pos: &mut usize) -> Result<usize> {
    let b = take(buf, pos, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("missing PMDP1 magic".into()));
    }
    let mut pos = MAGIC.len();
    let mut out = Vec::new();
    while pos < buf.len() {
        let len = take_u32(&buf, &mut pos)?;
        let name = std::str::from_utf8(take(&buf, &mut pos, len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = take_u32(&buf, &mut pos)?;
        let shape = (0..ndim)
            .map(|_| take_u32(&buf, &mut pos))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let raw = take(&buf, &mut pos, count * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?;
        out.push((name, t));
    }
    Ok(out)
}

/// Trained parameters plus the subspace-norm averages needed to compute
/// normalized distances at evaluation time.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub tracker: SubspaceNormTracker,
}

impl Checkpoint {
    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        let mut named: Vec<(String, Tensor)> = self
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        named.push((
            TRACKER_KEY.to_string(),
            Tensor::vector(self.tracker.mean_norms().to_vec()),
        ));
        named
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_tensors(&mut buf, &self.to_named()).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn from_bytes(config: &ModelConfig, bytes: &[u8]) -> Result<Self> {
        let mut named = read_tensors(bytes)?;
        let pos = named
            .iter()
            .position(|(n, _)| n == TRACKER_KEY)
            .ok_or_else(|| Error::Format(format!("missing {TRACKER_KEY}")))?;
        let (_, mu) = named.remove(pos);
        if mu.len() != config.num_subspaces {
            return Err(Error::dim(
                "checkpoint",
                format!(
                    "tracker has {} subspaces, config has {}",
                    mu.len(),
                    config.num_subspaces
                ),
            ));
        }
        let params = ModelParams::from_named(config, named)?;
        Ok(Self {
            params,
            tracker: SubspaceNormTracker::from_means(mu.into_data()),
        })
    }

    pub fn load(config: &ModelConfig, path: &Path) -> Result<Self> {
        Self::from_bytes(config, &std::fs::read(path)?)
    }

    pub fn model(&self, config: &ModelConfig) -> Model {
        Model {
            config: config.clone(),
            params: self.params.clone(),
        }
    }
}
