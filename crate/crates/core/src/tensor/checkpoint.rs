//! Parameter checkpoint encoding.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      8 bytes  "SPKMCKPT"
//! version    u32
//! layers     u32
//! per layer:
//!   kind     u8       1 = conv1d, 2 = conv_transpose1d, 3 = linear
//!   stride   u32
//!   padding  u32
//!   tensors  u32      always 2: weight then bias
//!   per tensor:
//!     rank   u32
//!     dims   u64 × rank
//!     values f64 × prod(dims)
//! ```

use std::io::{Read, Write};

use super::{LayerKind, LayerParams, Real, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPKMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::io("<checkpoint stream>", e)
}

pub(crate) fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

pub(crate) fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(io_err)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn write_tensor<T: Real>(w: &mut impl Write, t: &Tensor<T>) -> Result<()> {
    write_u32(w, t.shape().len() as u32)?;
    for &d in t.shape() {
        write_u64(w, d as u64)?;
    }
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    w.write_all(&buf).map_err(io_err)
}

fn read_tensor<T: Real>(r: &mut impl Read) -> Result<Tensor<T>> {
    let rank = read_u32(r)? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::Data(format!("implausible tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(r)? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= 1 << 32)
        .ok_or_else(|| Error::Data(format!("implausible tensor shape {shape:?}")))?;
    let values = read_f64s(r, n)?;
    Tensor::new(shape, values.into_iter().map(T::lit).collect())
}

/// Serialises layers in order.
pub fn write_checkpoint<'a, T: Real>(
    w: &mut impl Write,
    layers: impl IntoIterator<Item = &'a LayerParams<T>>,
) -> Result<()> {
    let layers: Vec<_> = layers.into_iter().collect();
    w.write_all(CHECKPOINT_MAGIC).map_err(io_err)?;
    write_u32(w, CHECKPOINT_VERSION)?;
    write_u32(w, layers.len() as u32)?;
    for p in layers {
        let (stride, padding) = match p.kind {
            LayerKind::Conv1d {
                stride, padding, ..
            }
            | LayerKind::ConvTranspose1d {
                stride, padding, ..
            } => (stride, padding),
            LayerKind::Linear { .. } => (1, 0),
        };
        w.write_all(&[p.kind.tag()]).map_err(io_err)?;
        write_u32(w, stride as u32)?;
        write_u32(w, padding as u32)?;
        write_u32(w, 2)?;
        write_tensor(w, &p.weight)?;
        write_tensor(w, &p.bias)?;
    }
    Ok(())
}

pub fn read_checkpoint<T: Real>(r: &mut impl Read) -> Result<Vec<LayerParams<T>>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Data("not a parameter checkpoint (bad magic)".into()));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            what: "checkpoint",
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let count = read_u32(r)? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag).map_err(io_err)?;
        let stride = read_u32(r)? as usize;
        let padding = read_u32(r)? as usize;
        let tensors = read_u32(r)?;
        if tensors != 2 {
            return Err(Error::Data(format!(
                "layer {i}: expected 2 tensors, found {tensors}"
            )));
        }
        let weight: Tensor<T> = read_tensor(r)?;
        let bias: Tensor<T> = read_tensor(r)?;
        let ws = weight.shape().to_vec();
        let kind = match (tag[0], ws.as_slice()) {
            (1, &[out_channels, in_channels, kernel]) => LayerKind::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            },
            (2, &[in_channels, out_channels, kernel]) => LayerKind::ConvTranspose1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            },
            (3, &[out_features, in_features]) => LayerKind::Linear {
                in_features,
                out_features,
            },
            (t, s) => {
                return Err(Error::Data(format!(
                    "layer {i}: kind tag {t} incompatible with weight shape {s:?}"
                )))
            }
        };
        layers.push(
            LayerParams::new(kind, weight, bias)
                .map_err(|e| Error::Data(format!("layer {i}: {e}")))?,
        );
    }
    Ok(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::tensor::Init;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layers: Vec<LayerParams<f32>> = vec![
            LayerParams::init(
                LayerParams::<f32>::conv1d_same(3, 4, 5).unwrap(),
                Init::Uniform,
                &mut rng,
            )
            .unwrap(),
            LayerParams::init(
                LayerKind::ConvTranspose1d {
                    in_channels: 4,
                    out_channels: 2,
                    kernel: 8,
                    stride: 2,
                    padding: 3,
                },
                Init::HeUniform,
                &mut rng,
            )
            .unwrap(),
            LayerParams::init(
                LayerKind::Linear {
                    in_features: 7,
                    out_features: 3,
                },
                Init::Uniform,
                &mut rng,
            )
            .unwrap(),
        ];
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &layers).unwrap();
        let back: Vec<LayerParams<f32>> = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, layers);
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        assert!(matches!(
            read_checkpoint::<f64>(&mut &b"NOTACKPTxxxxxxxx"[..]),
            Err(Error::Data(_))
        ));
        let mut buf = CHECKPOINT_MAGIC.to_vec();
        buf.extend_from_slice(&99u32.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            read_checkpoint::<f64>(&mut buf.as_slice()),
            Err(Error::Version { found: 99, .. })
        ));
    }
}
