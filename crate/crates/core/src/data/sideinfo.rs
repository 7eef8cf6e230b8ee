use super::GzslSource;
use crate::error::{Error, Result};
use crate::numerics::SeededRng;
use crate::vae::ModalityId;

/// Which side-information modality each class is paired with.
#[derive(Clone, Debug, PartialEq)]
pub struct SideInfoAssignment {
    /// Percentage of seen classes using sentences, when mixing.
    pub x_s_percent: f64,
    /// Percentage of unseen classes using sentences, when mixing.
    pub x_u_percent: f64,
    /// Indexed by class index.
    pub per_class: Vec<ModalityId>,
}

impl SideInfoAssignment {
    /// Attributes where available, otherwise the first table present for the
    /// class.
    pub fn default_for<S: GzslSource + ?Sized>(source: &S) -> Result<Self> {
        let dims = source.modality_dims();
        let per_class = (0..source.classes().len())
            .map(|k| {
                let pick = if source.has_embedding(ModalityId::Attribute, k) {
                    Some(ModalityId::Attribute)
                } else {
                    dims.iter().map(|d| d.0).find(|&m| source.has_embedding(m, k))
                };
                pick.ok_or_else(|| {
                    Error::contract(format!("class {} has no side information", source.classes()[k].id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            x_s_percent: 0.0,
            x_u_percent: 0.0,
            per_class,
        })
    }

    /// Every class uses `modality`.
    pub fn uniform<S: GzslSource + ?Sized>(source: &S, modality: ModalityId) -> Result<Self> {
        let per_class = vec![modality; source.classes().len()];
        check_present(source, &per_class)?;
        Ok(Self {
            x_s_percent: 0.0,
            x_u_percent: 0.0,
            per_class,
        })
    }

    /// Distinct modalities in use, in code order.
    pub fn modalities(&self) -> Vec<ModalityId> {
        let mut out: Vec<ModalityId> = self.per_class.clone();
        out.sort();
        out.dedup();
        out
    }

    pub fn sentence_count(&self, classes: &[usize]) -> usize {
        classes
            .iter()
            .filter(|&&k| self.per_class[k] == ModalityId::Sentence)
            .count()
    }
}

fn check_present<S: GzslSource + ?Sized>(source: &S, per_class: &[ModalityId]) -> Result<()> {
    for (k, &m) in per_class.iter().enumerate() {
        if !source.has_embedding(m, k) {
            return Err(Error::contract(format!(
                "class {} is assigned {m} but has no such embedding",
                source.classes()[k].id
            )));
        }
    }
    Ok(())
}

/// Randomly pairs `round(x_s% · #seen)` seen classes and
/// `round(x_u% · #unseen)` unseen classes with sentence embeddings; all
/// other classes use attributes.
pub fn assign_side_info<S: GzslSource + ?Sized>(
    source: &S,
    x_s_percent: f64,
    x_u_percent: f64,
    seed: u64,
) -> Result<SideInfoAssignment> {
    for p in [x_s_percent, x_u_percent] {
        if !(0.0..=100.0).contains(&p) {
            return Err(Error::contract(format!("side-information percentage {p} outside [0, 100]")));
        }
    }
    let mut per_class = vec![ModalityId::Attribute; source.classes().len()];
    let rng = SeededRng::new(seed).fork(0x5151);
    for (group, percent, label) in [
        (source.seen_classes(), x_s_percent, 0u64),
        (source.unseen_classes(), x_u_percent, 1u64),
    ] {
        let count = (percent / 100.0 * group.len() as f64).round() as usize;
        let mut shuffled = group.clone();
        rng.fork(label).shuffle(&mut shuffled);
        for &k in &shuffled[..count.min(shuffled.len())] {
            per_class[k] = ModalityId::Sentence;
        }
    }
    check_present(source, &per_class)?;
    Ok(SideInfoAssignment {
        x_s_percent,
        x_u_percent,
        per_class,
    })
}
