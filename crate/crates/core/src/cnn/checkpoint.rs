//! SPCK checkpoints: architecture descriptor, named f32 tensors, and
//! optional PCA (`PCA1`) and centroid (`KMN1`) sections.

use std::path::Path;

use super::arch::{parse_kv, Architecture};
use super::network::{CnnModel, Tensor};
use crate::ingest::wire::{self, Reader};
use crate::pca::PcaModel;
use crate::{Error, Result};

pub const SPCK_VERSION: u32 = 1;

/// How features are conditioned between PCA and k-means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReducerSettings {
    pub whiten: bool,
    pub l2_normalize: bool,
}

impl Default for ReducerSettings {
    fn default() -> Self {
        ReducerSettings {
            whiten: false,
            l2_normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    pub k: usize,
    pub dim: usize,
    /// `k × dim`, row-major.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: CnnModel<f32>,
    pub reducer: Option<ReducerSettings>,
    pub pca: Option<PcaModel>,
    pub centroids: Option<Centroids>,
}

fn descriptor(c: &Checkpoint) -> String {
    let mut text = c.model.arch().to_text();
    text.push_str(&format!("seed={}\n", c.model.seed()));
    if let Some(r) = c.reducer {
        text.push_str(&format!(
            "whiten={}\nl2_normalize={}\n",
            u8::from(r.whiten),
            u8::from(r.l2_normalize)
        ));
    }
    text
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor<f32>) {
    wire::put_u16(out, t.name.len() as u16);
    out.extend_from_slice(t.name.as_bytes());
    out.push(t.shape.len() as u8);
    for &d in &t.shape {
        wire::put_u32(out, d as u32);
    }
    wire::put_f32s(out, t.data.iter().copied());
}

fn read_tensor(r: &mut Reader) -> Result<Tensor<f32>> {
    let len = r.u16()? as usize;
    let name = r.string(len)?;
    let rank = r.u8()? as usize;
    let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let count = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|&c| c <= r.remaining() / 4)
        .ok_or_else(|| Error::Format(format!("tensor '{name}' is larger than the file")))?;
    let data = r.f32_vec(count)?;
    Ok(Tensor { name, shape, data })
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for &v in vs {
        wire::put_f64(out, v);
    }
}

fn read_f64s(r: &mut Reader, count: usize) -> Result<Vec<f64>> {
    if count > r.remaining() / 8 {
        return Err(Error::Format("section is larger than the file".into()));
    }
    (0..count).map(|_| r.f64()).collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = b"SPCK".to_vec();
        wire::put_u32(&mut out, SPCK_VERSION);
        let desc = descriptor(self);
        wire::put_u32(&mut out, desc.len() as u32);
        out.extend_from_slice(desc.as_bytes());
        let m = &self.model;
        wire::put_u32(&mut out, (m.params().len() + m.buffers().len()) as u32);
        for t in m.params().iter().chain(m.buffers()) {
            put_tensor(&mut out, t);
        }
        if let Some(p) = &self.pca {
            out.extend_from_slice(b"PCA1");
            wire::put_u32(&mut out, p.dim() as u32);
            wire::put_u32(&mut out, p.n_components() as u32);
            put_f64s(&mut out, p.mean());
            put_f64s(&mut out, p.components());
            put_f64s(&mut out, p.explained_variance());
            wire::put_f64(&mut out, p.total_variance());
        }
        if let Some(c) = &self.centroids {
            out.extend_from_slice(b"KMN1");
            wire::put_u32(&mut out, c.k as u32);
            wire::put_u32(&mut out, c.dim as u32);
            put_f64s(&mut out, &c.values);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "SPCK checkpoint");
        r.magic(b"SPCK")?;
        let version = r.u32()?;
        if version != SPCK_VERSION {
            return Err(Error::Version {
                found: version,
                expected: SPCK_VERSION,
            });
        }
        let len = r.u32()? as usize;
        let mut kv = parse_kv(&r.string(len)?)?;
        let flag = |kv: &mut std::collections::BTreeMap<String, String>, key: &str| -> Result<Option<bool>> {
            match kv.remove(key).as_deref() {
                None => Ok(None),
                Some("0") => Ok(Some(false)),
                Some("1") => Ok(Some(true)),
                Some(v) => Err(Error::Format(format!("bad flag {key}={v}"))),
            }
        };
        let seed = kv
            .remove("seed")
            .ok_or_else(|| Error::Format("descriptor lacks 'seed'".into()))?
            .parse::<u64>()
            .map_err(|_| Error::Format("bad seed in descriptor".into()))?;
        let reducer = match (flag(&mut kv, "whiten")?, flag(&mut kv, "l2_normalize")?) {
            (Some(whiten), Some(l2_normalize)) => Some(ReducerSettings { whiten, l2_normalize }),
            (None, None) => None,
            _ => return Err(Error::Format("reducer settings are incomplete".into())),
        };
        let arch = Architecture::from_map(&kv)?;
        let known = ["arch", "window", "in_channels", "stem", "maxpool", "stages", "classes"];
        if let Some(k) = kv.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::Format(format!("unknown descriptor key '{k}'")));
        }

        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            tensors.push(read_tensor(&mut r)?);
        }
        let n_params = CnnModel::<f32>::new(arch.clone(), seed)?.params().len();
        if tensors.len() < n_params {
            return Err(Error::Format(format!("{} tensors, expected more than {n_params}", tensors.len())));
        }
        let buffers = tensors.split_off(n_params);
        let model = CnnModel::from_tensors(arch, seed, tensors, buffers)?;

        let mut pca = None;
        let mut centroids = None;
        while !r.is_empty() {
            let tag = r.take(4)?;
            match tag {
                b"PCA1" if pca.is_none() => {
                    let dim = r.u32()? as usize;
                    let n = r.u32()? as usize;
                    let mean = read_f64s(&mut r, dim)?;
                    let components = read_f64s(&mut r, n.saturating_mul(dim))?;
                    let variances = read_f64s(&mut r, n)?;
                    let total = r.f64()?;
                    pca = Some(
                        PcaModel::from_parts(mean, components, variances, total)
                            .map_err(|e| Error::Format(format!("bad PCA section: {e}")))?,
                    );
                }
                b"KMN1" if centroids.is_none() => {
                    let k = r.u32()? as usize;
                    let dim = r.u32()? as usize;
                    let values = read_f64s(&mut r, k.saturating_mul(dim))?;
                    centroids = Some(Centroids { k, dim, values });
                }
                other => {
                    return Err(Error::Format(format!(
                        "unexpected section '{}'",
                        String::from_utf8_lossy(other)
                    )))
                }
            }
        }
        Ok(Checkpoint {
            model,
            reducer,
            pca,
            centroids,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    wire::write_file(path.as_ref(), &checkpoint.to_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&wire::read_file(path.as_ref())?)
}
