use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::vae::ModalityId;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassInfo {
    pub id: u32,
    pub name: String,
    pub seen: bool,
}

/// Per-class embeddings of one side-information modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityTable {
    pub modality: ModalityId,
    /// `n_classes × dim`, row `k` belongs to class index `k`.
    pub embeddings: Matrix,
    pub present: Vec<bool>,
}

impl ModalityTable {
    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }
}

/// Image features with their class indices (positions in
/// [`GzslDataset::classes`]).
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Samples {
    pub fn empty(feat_dim: usize) -> Self {
        Self {
            features: Matrix::zeros(0, feat_dim),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    TrainSeen,
    TestSeen,
    TestUnseen,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::TrainSeen, Split::TestSeen, Split::TestUnseen];
}

/// Labelled image features, class side information and the seen/unseen
/// split. Construct through [`GzslDataset::new`], which checks every
/// invariant.
#[derive(Clone, Debug, PartialEq)]
pub struct GzslDataset {
    feat_dim: usize,
    classes: Vec<ClassInfo>,
    modalities: Vec<ModalityTable>,
    train_seen: Samples,
    test_seen: Samples,
    test_unseen: Samples,
}

impl GzslDataset {
    pub fn new(
        feat_dim: usize,
        classes: Vec<ClassInfo>,
        modalities: Vec<ModalityTable>,
        train_seen: Samples,
        test_seen: Samples,
        test_unseen: Samples,
    ) -> Result<Self> {
        let ds = Self {
            feat_dim,
            classes,
            modalities,
            train_seen,
            test_seen,
            test_unseen,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let n = self.classes.len();
        let mut ids = BTreeSet::new();
        for c in &self.classes {
            if !ids.insert(c.id) {
                return Err(Error::contract(format!(
                    "class id {} appears more than once (seen and unseen ids must be disjoint)",
                    c.id
                )));
            }
        }
        let mut kinds = BTreeSet::new();
        for m in &self.modalities {
            if m.modality == ModalityId::ImageFeature {
                return Err(Error::contract("image features cannot be a side-information modality"));
            }
            if !kinds.insert(m.modality) {
                return Err(Error::contract(format!("modality {} listed twice", m.modality)));
            }
            if m.embeddings.rows() != n || m.present.len() != n {
                return Err(Error::contract(format!(
                    "modality {} covers {} classes, expected {n}",
                    m.modality,
                    m.embeddings.rows()
                )));
            }
        }
        for (k, c) in self.classes.iter().enumerate() {
            if !self.modalities.iter().any(|m| m.present[k]) {
                return Err(Error::contract(format!("class {} has no side information", c.id)));
            }
        }
        for (split, samples) in self.splits() {
            if samples.features.cols() != self.feat_dim {
                return Err(Error::contract(format!(
                    "{split:?} features have {} columns, expected {}",
                    samples.features.cols(),
                    self.feat_dim
                )));
            }
            if samples.features.rows() != samples.labels.len() {
                return Err(Error::contract(format!("{split:?} label count differs from feature rows")));
            }
            let want_seen = split != Split::TestUnseen;
            for &l in &samples.labels {
                let Some(class) = self.classes.get(l) else {
                    return Err(Error::contract(format!("{split:?} label index {l} out of range")));
                };
                if class.seen != want_seen {
                    return Err(Error::contract(format!(
                        "{split:?} contains class {} which is {}",
                        class.id,
                        if class.seen { "seen" } else { "unseen" }
                    )));
                }
            }
        }
        Ok(())
    }

    fn splits(&self) -> [(Split, &Samples); 3] {
        [
            (Split::TrainSeen, &self.train_seen),
            (Split::TestSeen, &self.test_seen),
            (Split::TestUnseen, &self.test_unseen),
        ]
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn modalities(&self) -> &[ModalityTable] {
        &self.modalities
    }

    pub fn modality(&self, id: ModalityId) -> Option<&ModalityTable> {
        self.modalities.iter().find(|m| m.modality == id)
    }

    pub fn samples(&self, split: Split) -> &Samples {
        match split {
            Split::TrainSeen => &self.train_seen,
            Split::TestSeen => &self.test_seen,
            Split::TestUnseen => &self.test_unseen,
        }
    }

    pub fn seen_classes(&self) -> Vec<usize> {
        (0..self.classes.len()).filter(|&k| self.classes[k].seen).collect()
    }

    pub fn unseen_classes(&self) -> Vec<usize> {
        (0..self.classes.len()).filter(|&k| !self.classes[k].seen).collect()
    }

    pub fn class_index(&self, id: u32) -> Option<usize> {
        self.classes.iter().position(|c| c.id == id)
    }

    /// Multi-line human-readable overview.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let seen = self.seen_classes().len();
        s.push_str(&format!(
            "classes: {} ({} seen, {} unseen)\n",
            self.classes.len(),
            seen,
            self.classes.len() - seen
        ));
        s.push_str(&format!("feature dim: {}\n", self.feat_dim));
        for m in &self.modalities {
            let present = m.present.iter().filter(|p| **p).count();
            s.push_str(&format!(
                "modality {}: dim {}, present for {} classes\n",
                m.modality,
                m.dim(),
                present
            ));
        }
        for (split, samples) in self.splits() {
            let name = match split {
                Split::TrainSeen => "train_seen",
                Split::TestSeen => "test_seen",
                Split::TestUnseen => "test_unseen",
            };
            s.push_str(&format!("{name}: {} samples\n", samples.len()));
        }
        s
    }
}
