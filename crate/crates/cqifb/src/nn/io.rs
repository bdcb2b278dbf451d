//! Binary model format: magic "CQNN", version, layer records, then f32
//! parameter blocks in declaration order. Little-endian throughout.

use std::path::Path;

use super::{Layer, LayerKind, Matrix, NetworkModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CQNN";
const VERSION: u16 = 1;
const MAX_LAYERS: usize = 1024;
const MAX_DIM: usize = 1 << 20;
const MAX_TOTAL_PARAMS: usize = 1 << 26;

fn kind_code(kind: LayerKind) -> u8 {
    match kind {
        LayerKind::Dense => 0,
        LayerKind::BatchNorm => 1,
        LayerKind::LeakyRelu => 2,
        LayerKind::Sigmoid => 3,
        LayerKind::Dropout => 4,
        LayerKind::Quantize => 5,
    }
}

fn code_kind(code: u8) -> Result<LayerKind> {
    Ok(match code {
        0 => LayerKind::Dense,
        1 => LayerKind::BatchNorm,
        2 => LayerKind::LeakyRelu,
        3 => LayerKind::Sigmoid,
        4 => LayerKind::Dropout,
        5 => LayerKind::Quantize,
        other => return Err(Error::format(format!("unknown layer kind {other}"))),
    })
}

/// Serializes a model to its wire form.
pub fn model_to_bytes(model: &NetworkModel) -> Vec<u8> {
    let specs = model.specs();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(specs.len() as u16).to_le_bytes());
    let (flag, from, to) = match model.shortcut() {
        Some((f, t)) => (1u8, f as u32, t as u32),
        None => (0u8, 0, 0),
    };
    out.push(flag);
    out.extend_from_slice(&from.to_le_bytes());
    out.extend_from_slice(&to.to_le_bytes());
    for s in &specs {
        out.push(kind_code(s.kind));
        out.extend_from_slice(&(s.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&(s.out_dim as u32).to_le_bytes());
        out.extend_from_slice(&s.param.to_le_bytes());
        out.extend_from_slice(&s.bits.to_le_bytes());
    }
    for layer in model.layers() {
        match layer {
            Layer::Dense { w, b } => {
                for &v in w.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for &v in b {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Layer::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                for vec in [gamma, beta, running_mean, running_var] {
                    for &v in vec {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
            _ => {}
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format("unexpected end of model file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Parses a model from its wire form, validating structure before allocating.
pub fn model_from_bytes(bytes: &[u8]) -> Result<NetworkModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format("bad magic: not a model file"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported model version {version}")));
    }
    let n_layers = r.u16()? as usize;
    if n_layers == 0 || n_layers > MAX_LAYERS {
        return Err(Error::format(format!("implausible layer count {n_layers}")));
    }
    let flag = r.u8()?;
    let from = r.u32()? as usize;
    let to = r.u32()? as usize;
    if flag > 1 {
        return Err(Error::format("bad shortcut flag"));
    }
    let shortcut = if flag == 1 { Some((from, to)) } else { None };

    struct Record {
        kind: LayerKind,
        in_dim: usize,
        out_dim: usize,
        param: f64,
        bits: u32,
    }
    let mut records = Vec::with_capacity(n_layers);
    let mut total_params = 0usize;
    for _ in 0..n_layers {
        let kind = code_kind(r.u8()?)?;
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let param = r.f64()?;
        let bits = r.u32()?;
        if in_dim == 0 || out_dim == 0 || in_dim > MAX_DIM || out_dim > MAX_DIM {
            return Err(Error::format("implausible layer dimensions"));
        }
        total_params += match kind {
            LayerKind::Dense => in_dim
                .checked_mul(out_dim)
                .and_then(|n| n.checked_add(out_dim))
                .ok_or_else(|| Error::format("layer size overflow"))?,
            LayerKind::BatchNorm => 4 * in_dim,
            _ => 0,
        };
        if total_params > MAX_TOTAL_PARAMS {
            return Err(Error::format("model parameter block too large"));
        }
        records.push(Record {
            kind,
            in_dim,
            out_dim,
            param,
            bits,
        });
    }
    // The remaining bytes must hold exactly the declared parameters.
    if bytes.len() - r.pos != total_params * 4 {
        return Err(Error::format(format!(
            "parameter block size mismatch: expected {} bytes, found {}",
            total_params * 4,
            bytes.len() - r.pos
        )));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for rec in &records {
        let layer = match rec.kind {
            LayerKind::Dense => {
                let w = r.f32_vec(rec.in_dim * rec.out_dim)?;
                let b = r.f32_vec(rec.out_dim)?;
                Layer::Dense {
                    w: Matrix::from_vec(rec.in_dim, rec.out_dim, w),
                    b,
                }
            }
            LayerKind::BatchNorm => Layer::BatchNorm {
                gamma: r.f32_vec(rec.in_dim)?,
                beta: r.f32_vec(rec.in_dim)?,
                running_mean: r.f32_vec(rec.in_dim)?,
                running_var: r.f32_vec(rec.in_dim)?,
            },
            LayerKind::LeakyRelu => Layer::LeakyRelu {
                slope: rec.param as f32,
            },
            LayerKind::Sigmoid => Layer::Sigmoid,
            LayerKind::Dropout => {
                if !(0.0..1.0).contains(&rec.param) {
                    return Err(Error::format("dropout rate out of range"));
                }
                Layer::Dropout { rate: rec.param as f32 }
            }
            LayerKind::Quantize => {
                if rec.bits == 0 || rec.bits > 16 {
                    return Err(Error::format("quantize bits out of range"));
                }
                Layer::Quantize { bits: rec.bits }
            }
        };
        layers.push(layer);
    }
    let in_dim = records[0].in_dim;
    NetworkModel::new(layers, shortcut, in_dim).map_err(|e| Error::format(e.to_string()))
}

pub fn save_model(model: &NetworkModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<NetworkModel> {
    model_from_bytes(&std::fs::read(path)?)
}
