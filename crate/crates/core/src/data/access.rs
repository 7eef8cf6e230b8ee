use std::cell::RefCell;

use super::{ClassInfo, GzslDataset, Split};
use crate::numerics::Matrix;
use crate::vae::ModalityId;

/// Read interface the training and latent-sampling code goes through.
///
/// Labels and class metadata are free to read; image features and class
/// embeddings are fetched one row at a time so that an instrumented
/// implementation can observe exactly what was touched.
pub trait GzslSource {
    fn feat_dim(&self) -> usize;
    fn classes(&self) -> &[ClassInfo];
    /// `(modality, dim)` for every side-information table.
    fn modality_dims(&self) -> Vec<(ModalityId, usize)>;
    fn has_embedding(&self, modality: ModalityId, class: usize) -> bool;
    fn labels(&self, split: Split) -> &[usize];
    fn feature(&self, split: Split, index: usize) -> &[f64];
    fn embedding(&self, modality: ModalityId, class: usize) -> Option<&[f64]>;

    fn seen_classes(&self) -> Vec<usize> {
        (0..self.classes().len()).filter(|&k| self.classes()[k].seen).collect()
    }

    fn unseen_classes(&self) -> Vec<usize> {
        (0..self.classes().len()).filter(|&k| !self.classes()[k].seen).collect()
    }

    /// Indices into `split` grouped by class index.
    fn indices_by_class(&self, split: Split) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.classes().len()];
        for (i, &l) in self.labels(split).iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Stacks the listed feature rows of `split`.
    fn feature_rows(&self, split: Split, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.feat_dim());
        for &i in indices {
            data.extend_from_slice(self.feature(split, i));
        }
        Matrix::from_vec(indices.len(), self.feat_dim(), data).expect("rows have feat_dim columns")
    }
}

impl GzslSource for GzslDataset {
    fn feat_dim(&self) -> usize {
        GzslDataset::feat_dim(self)
    }

    fn classes(&self) -> &[ClassInfo] {
        GzslDataset::classes(self)
    }

    fn modality_dims(&self) -> Vec<(ModalityId, usize)> {
        self.modalities().iter().map(|m| (m.modality, m.dim())).collect()
    }

    fn has_embedding(&self, modality: ModalityId, class: usize) -> bool {
        self.modality(modality).is_some_and(|m| m.present[class])
    }

    fn labels(&self, split: Split) -> &[usize] {
        &self.samples(split).labels
    }

    fn feature(&self, split: Split, index: usize) -> &[f64] {
        self.samples(split).features.row(index)
    }

    fn embedding(&self, modality: ModalityId, class: usize) -> Option<&[f64]> {
        let table = self.modality(modality)?;
        table.present[class].then(|| table.embeddings.row(class))
    }
}

/// One recorded read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Access {
    Feature(Split, usize),
    Embedding(ModalityId, usize),
}

/// Wraps a source and records every feature and embedding read, in order.
pub struct AccessLog<'a, S: GzslSource + ?Sized> {
    inner: &'a S,
    log: RefCell<Vec<Access>>,
}

impl<'a, S: GzslSource + ?Sized> AccessLog<'a, S> {
    pub fn new(inner: &'a S) -> Self {
        Self {
            inner,
            log: RefCell::new(Vec::new()),
        }
    }

    pub fn events(&self) -> Vec<Access> {
        self.log.borrow().clone()
    }

    pub fn clear(&self) {
        self.log.borrow_mut().clear();
    }

    /// Reads of unseen-class image features (the `TestUnseen` split).
    pub fn unseen_feature_reads(&self) -> Vec<usize> {
        self.log
            .borrow()
            .iter()
            .filter_map(|a| match a {
                Access::Feature(Split::TestUnseen, i) => Some(*i),
                _ => None,
            })
            .collect()
    }

    /// Embedding reads of classes marked unseen.
    pub fn unseen_embedding_reads(&self) -> Vec<usize> {
        let classes = self.inner.classes();
        self.log
            .borrow()
            .iter()
            .filter_map(|a| match a {
                Access::Embedding(_, c) if !classes[*c].seen => Some(*c),
                _ => None,
            })
            .collect()
    }
}

impl<S: GzslSource + ?Sized> GzslSource for AccessLog<'_, S> {
    fn feat_dim(&self) -> usize {
        self.inner.feat_dim()
    }

    fn classes(&self) -> &[ClassInfo] {
        self.inner.classes()
    }

    fn modality_dims(&self) -> Vec<(ModalityId, usize)> {
        self.inner.modality_dims()
    }

    fn has_embedding(&self, modality: ModalityId, class: usize) -> bool {
        self.inner.has_embedding(modality, class)
    }

    fn labels(&self, split: Split) -> &[usize] {
        self.inner.labels(split)
    }

    fn feature(&self, split: Split, index: usize) -> &[f64] {
        self.log.borrow_mut().push(Access::Feature(split, index));
        self.inner.feature(split, index)
    }

    fn embedding(&self, modality: ModalityId, class: usize) -> Option<&[f64]> {
        self.log.borrow_mut().push(Access::Embedding(modality, class));
        self.inner.embedding(modality, class)
    }
}
