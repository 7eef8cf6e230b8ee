//! `.gzc` dataset container.
//!
//! Little-endian layout:
//!
//! ```text
//! "GZSC"  u16 version (=1)
//! u32 feat_dim  u32 n_classes  u32 n_seen
//! n_classes × { u32 id, u8 seen, u16 name_len, name (UTF-8) }
//! u8 n_modalities
//! n_modalities × { u8 modality_id, u32 dim, n_classes×dim f32, n_classes × u8 present }
//! 3 × { u32 N, N × { u32 class_id, feat_dim × f32 } }   train_seen, test_seen, test_unseen
//! ```
//!
//! Values are stored as `f32` and widened to `f64` when loaded.

use std::path::Path;

use super::{ClassInfo, GzslDataset, ModalityTable, Samples, Split};
use crate::binio::{len_u32, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::vae::ModalityId;

pub const MAGIC: &[u8; 4] = b"GZSC";
pub const VERSION: u16 = 1;

pub fn load_container(path: impl AsRef<Path>) -> Result<GzslDataset> {
    let bytes = std::fs::read(path)?;
    decode_container(&bytes)
}

pub fn save_container(dataset: &GzslDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_container(dataset)?)?;
    Ok(())
}

pub fn decode_container(bytes: &[u8]) -> Result<GzslDataset> {
    let mut r = ByteReader::new(bytes);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected \"GZSC\"".into(),
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
    let feat_dim = r.u32("feat_dim")? as usize;
    let n_classes = r.u32("class count")? as usize;
    let n_seen = r.u32("seen count")? as usize;

    let mut classes = Vec::with_capacity(n_classes.min(1 << 16));
    for _ in 0..n_classes {
        let id = r.u32("class id")?;
        let seen = match r.u8("seen flag")? {
            0 => false,
            1 => true,
            other => return r.fail(format!("seen flag must be 0 or 1, got {other}")),
        };
        let len = r.u16("name length")? as usize;
        let name = match std::str::from_utf8(r.take(len, "class name")?) {
            Ok(s) => s.to_owned(),
            Err(_) => return r.fail("class name is not UTF-8"),
        };
        classes.push(ClassInfo { id, name, seen });
    }
    let mut ids: Vec<u32> = classes.iter().map(|c| c.id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::contract(format!(
            "class id {} appears more than once (seen and unseen ids must be disjoint)",
            w[0]
        )));
    }
    let declared_seen = classes.iter().filter(|c| c.seen).count();
    if declared_seen != n_seen {
        return r.fail(format!("header declares {n_seen} seen classes, class table has {declared_seen}"));
    }

    let n_modalities = r.u8("modality count")? as usize;
    let mut modalities = Vec::with_capacity(n_modalities);
    for _ in 0..n_modalities {
        let code = r.u8("modality id")?;
        let Some(modality) = ModalityId::from_code(code).filter(|m| m.is_side_information()) else {
            return r.fail(format!("unknown side-information modality id {code}"));
        };
        let dim = r.u32("modality dim")? as usize;
        let values = r.f32s(n_classes.saturating_mul(dim), "class embeddings")?;
        let mut present = Vec::with_capacity(n_classes);
        for _ in 0..n_classes {
            present.push(match r.u8("presence mask")? {
                0 => false,
                1 => true,
                other => return r.fail(format!("presence flag must be 0 or 1, got {other}")),
            });
        }
        modalities.push(ModalityTable {
            modality,
            embeddings: Matrix::from_vec(n_classes, dim, values)?,
            present,
        });
    }

    let index_of = |id: u32| classes.iter().position(|c| c.id == id);
    let mut sections = Vec::with_capacity(3);
    for split in Split::ALL {
        let n = r.u32("sample count")? as usize;
        let mut labels = Vec::with_capacity(n.min(1 << 20));
        let mut data = Vec::with_capacity(n.min(1 << 20).saturating_mul(feat_dim));
        for _ in 0..n {
            let id = r.u32("sample label")?;
            let Some(k) = index_of(id) else {
                return r.fail(format!("{split:?} sample refers to unknown class id {id}"));
            };
            labels.push(k);
            data.extend(r.f32s(feat_dim, "sample features")?);
        }
        sections.push(Samples {
            features: Matrix::from_vec(n, feat_dim, data)?,
            labels,
        });
    }
    r.expect_end()?;

    let test_unseen = sections.pop().expect("three sections");
    let test_seen = sections.pop().expect("three sections");
    let train_seen = sections.pop().expect("three sections");
    GzslDataset::new(feat_dim, classes, modalities, train_seen, test_seen, test_unseen)
}

pub fn encode_container(ds: &GzslDataset) -> Result<Vec<u8>> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u32(len_u32(ds.feat_dim(), "feat_dim")?);
    w.u32(len_u32(ds.classes().len(), "class count")?);
    w.u32(len_u32(ds.seen_classes().len(), "seen count")?);
    for c in ds.classes() {
        w.u32(c.id);
        w.u8(c.seen as u8);
        let name = c.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| Error::contract(format!("class name of {} is too long", c.id)))?;
        w.u16(len);
        w.bytes(name);
    }
    let n_mod = u8::try_from(ds.modalities().len())
        .map_err(|_| Error::contract("at most 255 modalities fit in a container"))?;
    w.u8(n_mod);
    for m in ds.modalities() {
        w.u8(m.modality.code());
        w.u32(len_u32(m.dim(), "modality dim")?);
        w.f32s(m.embeddings.data());
        for &p in &m.present {
            w.u8(p as u8);
        }
    }
    for split in Split::ALL {
        let s = ds.samples(split);
        w.u32(len_u32(s.len(), "sample count")?);
        for (i, &label) in s.labels.iter().enumerate() {
            w.u32(ds.classes()[label].id);
            w.f32s(s.features.row(i));
        }
    }
    Ok(w.buf)
}
