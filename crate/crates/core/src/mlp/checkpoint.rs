//! Binary checkpoint container.
//!
//! All integers and floats are little-endian; floats are IEEE-754 `f64`.
//!
//! ```text
//! magic        8 bytes   "RIMCKPT\0"
//! version      u32       currently 1
//! -- architecture --
//! input        u32
//! n_hidden     u32
//! hidden       u32 x n_hidden
//! output       u32
//! activation   u8        0 = relu, 1 = tanh
//! split_index  u32
//! -- scaler --
//! count        u64       rows the scaler was fitted on
//! n_features   u32
//! mean         f64 x n_features
//! std          f64 x n_features
//! -- parameters, one block per dense layer in forward order --
//! n_layers     u32
//!   outputs    u32
//!   inputs     u32
//!   weights    f64 x outputs*inputs, row-major
//!   bias       f64 x outputs
//! -- trailer --
//! sha256       32 bytes  digest of every preceding byte
//! ```
//!
//! Decoding verifies the digest before looking at anything past the version
//! field, so a truncated or corrupted file never yields a partial model.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Activation, Architecture, Layer, ModelParams};
use crate::error::{Error, Result};
use crate::features::{ScalerStats, N_FEATURES};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RIMCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const MAX_WIDTH: u32 = 1 << 16;
const MAX_LAYERS: u32 = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub scaler: ScalerStats,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(arch: Architecture, scaler: ScalerStats, params: ModelParams) -> Result<Self> {
        arch.validate()?;
        params.check_architecture(&arch)?;
        if arch.input != N_FEATURES {
            return Err(Error::Shape(format!(
                "checkpoint models take {N_FEATURES} inputs, got {}",
                arch.input
            )));
        }
        scaler.validate()?;
        if !params.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(Self { arch, scaler, params })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.params.num_params() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);

        put_u32(&mut out, self.arch.input as u32);
        put_u32(&mut out, self.arch.hidden.len() as u32);
        for &w in &self.arch.hidden {
            put_u32(&mut out, w as u32);
        }
        put_u32(&mut out, self.arch.output as u32);
        out.push(self.arch.activation.code());
        put_u32(&mut out, self.arch.split_index as u32);

        out.extend_from_slice(&self.scaler.count.to_le_bytes());
        put_u32(&mut out, N_FEATURES as u32);
        for v in self.scaler.mean.iter().chain(&self.scaler.std) {
            out.extend_from_slice(&v.to_le_bytes());
        }

        put_u32(&mut out, self.params.layers.len() as u32);
        for l in &self.params.layers {
            put_u32(&mut out, l.outputs as u32);
            put_u32(&mut out, l.inputs as u32);
            for v in l.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + DIGEST_LEN {
            return Err(Error::Integrity(format!("file too short ({} bytes)", bytes.len())));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Integrity("bad magic, not a checkpoint".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Integrity("checksum mismatch (truncated or corrupted)".into()));
        }
        let mut cur = Cursor { buf: body, pos: 8 };
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }

        let input = cur.width()?;
        let n_hidden = cur.u32()?;
        if n_hidden >= MAX_LAYERS {
            return Err(Error::Integrity(format!("{n_hidden} hidden layers")));
        }
        let hidden = (0..n_hidden).map(|_| cur.width()).collect::<Result<Vec<_>>>()?;
        let output = cur.width()?;
        let activation =
            Activation::from_code(cur.u8()?).ok_or_else(|| Error::Integrity("unknown activation code".into()))?;
        let split_index = cur.u32()? as usize;
        let arch = Architecture {
            input,
            hidden,
            output,
            activation,
            split_index,
        };
        arch.validate()
            .map_err(|e| Error::Integrity(format!("architecture: {e}")))?;

        let count = cur.u64()?;
        let n_features = cur.u32()?;
        if n_features as usize != N_FEATURES {
            return Err(Error::Integrity(format!(
                "scaler has {n_features} features, expected {N_FEATURES}"
            )));
        }
        let mut mean = [0.0; N_FEATURES];
        let mut std = [0.0; N_FEATURES];
        for v in mean.iter_mut().chain(std.iter_mut()) {
            *v = cur.f64()?;
        }
        let scaler = ScalerStats { mean, std, count };

        let n_layers = cur.u32()?;
        if n_layers as usize != arch.layer_count() {
            return Err(Error::Integrity(format!(
                "{n_layers} parameter blocks for a {}-layer architecture",
                arch.layer_count()
            )));
        }
        let mut layers = Vec::with_capacity(n_layers as usize);
        for _ in 0..n_layers {
            let outputs = cur.width()?;
            let inputs = cur.width()?;
            let n = outputs * inputs;
            if cur.remaining() < (n + outputs) * 8 {
                return Err(Error::Integrity("parameter block runs past end of file".into()));
            }
            let weights = (0..n).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
            let bias = (0..outputs).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
            layers.push(Layer {
                inputs,
                outputs,
                weights,
                bias,
            });
        }
        if cur.remaining() != 0 {
            return Err(Error::Integrity(format!("{} trailing bytes", cur.remaining())));
        }
        let params = ModelParams { layers, activation };
        Checkpoint::new(arch, scaler, params).map_err(|e| Error::Integrity(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    /// Loads and verifies a checkpoint; with `expected`, also requires the
    /// stored architecture to equal it.
    pub fn load(path: impl AsRef<Path>, expected: Option<&Architecture>) -> Result<Self> {
        let ckpt = Self::decode(&fs::read(path)?)?;
        if let Some(arch) = expected {
            if &ckpt.arch != arch {
                return Err(Error::Shape(format!(
                    "checkpoint architecture {:?} differs from expected {:?}",
                    ckpt.arch, arch
                )));
            }
        }
        Ok(ckpt)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::Integrity("unexpected end of data".into()))?;
        self.pos = end;
        Ok(slice.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn width(&mut self) -> Result<usize> {
        let w = self.u32()?;
        if w == 0 || w > MAX_WIDTH {
            return Err(Error::Integrity(format!("layer width {w} out of range")));
        }
        Ok(w as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::init_model;

    fn sample() -> Checkpoint {
        let arch = Architecture::default();
        let params = init_model(&arch, 17).unwrap();
        let scaler = ScalerStats {
            mean: [4.9, 7.0, 22.3, 21.0, 0.75, 1.8, 0.5],
            std: [2.4, 1.1, 3.0, 2.0, 0.43, 0.4, 0.5],
            count: 10_000,
        };
        Checkpoint::new(arch, scaler, params).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path, Some(&Architecture::default())).unwrap();
        assert_eq!(back, ck);
        for (a, b) in back.params.values().zip(ck.params.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncation_is_an_integrity_error() {
        let bytes = sample().encode();
        for cut in [1, 8, 100, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::decode(&bytes[..bytes.len() - cut]).unwrap_err();
            assert!(matches!(err, Error::Integrity(_)), "cut {cut}: {err:?}");
        }
    }

    #[test]
    fn flipped_byte_is_an_integrity_error() {
        let mut bytes = sample().encode();
        bytes[200] ^= 0x40;
        assert!(matches!(Checkpoint::decode(&bytes), Err(Error::Integrity(_))));
    }

    #[test]
    fn wrong_version_rejected() {
        let mut bytes = sample().encode();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        let body_len = bytes.len() - DIGEST_LEN;
        let digest = Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        assert!(matches!(
            Checkpoint::decode(&bytes),
            Err(Error::Version { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn architecture_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        sample().save(&path).unwrap();
        let other = Architecture {
            hidden: vec![32, 16, 8, 4],
            ..Architecture::default()
        };
        assert!(matches!(Checkpoint::load(&path, Some(&other)), Err(Error::Shape(_))));
    }
}
