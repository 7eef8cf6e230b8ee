//! Binary checkpoint of a set of modality VAEs.
//!
//! Little-endian layout:
//!
//! ```text
//! "CVAE"  u16 version (=1)  u32 latent_dim  u8 n_modalities
//! n_modalities × {
//!     u8 modality_id
//!     encoder: u8 n_layers, n_layers × { u32 rows, u32 cols, rows·cols f64 weight, rows f64 bias }
//!     decoder: same as encoder
//! }
//! ```
//!
//! Weights are row-major `out × in`; values are stored as exact `f64` bits.

use std::path::Path;

use crate::binio::{len_u32, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::numerics::{Activation, AffineLayer, Matrix, Mlp};
use crate::vae::{ModalityId, ModalityVae};

pub const MAGIC: &[u8; 4] = b"CVAE";
pub const VERSION: u16 = 1;

/// Trained VAEs sharing one latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub latent_dim: usize,
    pub vaes: Vec<ModalityVae>,
}

impl Checkpoint {
    pub fn new(vaes: Vec<ModalityVae>) -> Result<Self> {
        let latent_dim = vaes.first().map_or(0, ModalityVae::latent_dim);
        if let Some(v) = vaes.iter().find(|v| v.latent_dim() != latent_dim) {
            return Err(Error::dim("Checkpoint latent_dim", latent_dim, v.latent_dim()));
        }
        Ok(Self { latent_dim, vaes })
    }

    pub fn vae(&self, modality: ModalityId) -> Option<&ModalityVae> {
        self.vaes.iter().find(|v| v.modality == modality)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::default();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.u32(len_u32(self.latent_dim, "latent_dim")?);
        w.u8(u8::try_from(self.vaes.len()).map_err(|_| Error::contract("too many modalities"))?);
        for vae in &self.vaes {
            w.u8(vae.modality.code());
            for net in [&vae.encoder, &vae.decoder] {
                w.u8(u8::try_from(net.layers().len()).map_err(|_| Error::contract("too many layers"))?);
                for layer in net.layers() {
                    w.u32(len_u32(layer.weight.rows(), "layer rows")?);
                    w.u32(len_u32(layer.weight.cols(), "layer cols")?);
                    w.f64s(layer.weight.data());
                    w.f64s(&layer.bias);
                }
            }
        }
        Ok(w.buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad magic, expected \"CVAE\"".into(),
            });
        }
        let at = r.offset();
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: at,
                message: format!("unsupported version {version}"),
            });
        }
        let latent_dim = r.u32("latent_dim")? as usize;
        let count = r.u8("modality count")?;
        let mut vaes = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let code = r.u8("modality id")?;
            let Some(modality) = ModalityId::from_code(code) else {
                return r.fail(format!("unknown modality id {code}"));
            };
            let encoder = read_mlp(&mut r)?;
            let decoder = read_mlp(&mut r)?;
            let at = r.offset();
            let vae = ModalityVae::from_parts(modality, encoder, decoder).map_err(|e| Error::Format {
                offset: at,
                message: e.to_string(),
            })?;
            if vae.latent_dim() != latent_dim {
                return r.fail(format!(
                    "{modality} VAE has latent dim {}, header says {latent_dim}",
                    vae.latent_dim()
                ));
            }
            vaes.push(vae);
        }
        r.expect_end()?;
        Ok(Self { latent_dim, vaes })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

fn read_mlp(r: &mut ByteReader<'_>) -> Result<Mlp> {
    let n_layers = r.u8("layer count")? as usize;
    if n_layers == 0 {
        return r.fail("network without layers");
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = r.u32("layer rows")? as usize;
        let cols = r.u32("layer cols")? as usize;
        let weight = r.f64s(rows.saturating_mul(cols), "layer weights")?;
        let bias = r.f64s(rows, "layer bias")?;
        layers.push(AffineLayer::new(Matrix::from_vec(rows, cols, weight)?, bias)?);
    }
    let at = r.offset();
    Mlp::new(layers, Activation::Relu).map_err(|e| Error::Format {
        offset: at,
        message: e.to_string(),
    })
}
