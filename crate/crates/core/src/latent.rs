//! Latent-space training and evaluation sets for the final classifier.
//!
//! Seen classes are represented by reparameterized encodings of their image
//! features, unseen classes by reparameterized encodings of their assigned
//! side-information embedding. Evaluation features are encoded with the
//! posterior mean only, so test sets are deterministic.

use std::fmt::Write as _;
use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::data::{ClassInfo, GzslSource, SideInfoAssignment, Split};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};
use crate::vae::{ModalityId, ModalityVae};

/// Latent vectors with class-index labels and the modality each row came
/// from.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDataset {
    pub vectors: Matrix,
    pub labels: Vec<usize>,
    pub provenance: Vec<ModalityId>,
}

impl LatentDataset {
    pub fn empty(latent_dim: usize) -> Self {
        Self {
            vectors: Matrix::zeros(0, latent_dim),
            labels: Vec::new(),
            provenance: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn latent_dim(&self) -> usize {
        self.vectors.cols()
    }

    /// Row count per class index, for `n_classes` classes.
    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    fn push_block(&mut self, z: &Matrix, label: usize, modality: ModalityId) {
        let mut data = std::mem::replace(&mut self.vectors, Matrix::zeros(0, 0)).into_vec();
        data.extend_from_slice(z.data());
        let rows = self.labels.len() + z.rows();
        self.vectors = Matrix::from_vec(rows, z.cols(), data).expect("consistent latent width");
        self.labels.extend(std::iter::repeat_n(label, z.rows()));
        self.provenance.extend(std::iter::repeat_n(modality, z.rows()));
    }

    /// CSV with header `label,z_0,...`; labels are class ids.
    pub fn to_csv(&self, classes: &[ClassInfo]) -> String {
        let mut s = String::from("label");
        for j in 0..self.latent_dim() {
            let _ = write!(s, ",z_{j}");
        }
        s.push('\n');
        for (i, &l) in self.labels.iter().enumerate() {
            let _ = write!(s, "{}", classes[l].id);
            for v in self.vectors.row(i) {
                let _ = write!(s, ",{v:.6}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, classes: &[ClassInfo], path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv(classes))?;
        Ok(())
    }
}

/// How many latent samples to draw per class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplingPlan {
    pub per_seen_class: usize,
    pub per_unseen_class: usize,
    /// Draw fresh, class-balanced batches at every classifier iteration
    /// instead of a fixed set.
    pub dynamic: bool,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            per_seen_class: 200,
            per_unseen_class: 400,
            dynamic: false,
        }
    }
}

/// Unseen-class image features released to the classifier in the
/// few-shot setting: indices into [`Split::TestUnseen`], by class index.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ShotPool {
    pub per_class: Vec<Vec<usize>>,
}

impl ShotPool {
    pub fn is_empty(&self) -> bool {
        self.per_class.iter().all(Vec::is_empty)
    }

    pub fn shots(&self, class: usize) -> &[usize] {
        self.per_class.get(class).map_or(&[], Vec::as_slice)
    }

    /// All released indices, sorted.
    pub fn all(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.per_class.concat();
        v.sort_unstable();
        v
    }
}

fn vae_for(model: &Checkpoint, modality: ModalityId) -> Result<&ModalityVae> {
    model
        .vae(modality)
        .ok_or_else(|| Error::contract(format!("checkpoint has no {modality} VAE")))
}

/// Reparameterized encodings of every row of `x`.
fn encode_sampled(vae: &ModalityVae, x: &Matrix, rng: &mut SeededRng) -> Result<Matrix> {
    let g = vae.encode(x)?;
    let eps = rng.gaussian_matrix(g.len(), g.latent_dim());
    g.reparameterize(&eps)
}

/// `n` draws from `0..available`: a random subset when `n` fits, otherwise
/// uniform draws with replacement.
fn pick(available: usize, n: usize, rng: &mut SeededRng) -> Vec<usize> {
    if n <= available {
        let mut all: Vec<usize> = (0..available).collect();
        rng.shuffle(&mut all);
        all.truncate(n);
        all
    } else {
        (0..n).map(|_| rng.below(available)).collect()
    }
}

fn side_embedding<'a, S: GzslSource + ?Sized>(
    source: &'a S,
    assignment: &SideInfoAssignment,
    class: usize,
) -> Result<(ModalityId, &'a [f64])> {
    let m = assignment.per_class[class];
    source
        .embedding(m, class)
        .map(|e| (m, e))
        .ok_or_else(|| Error::contract(format!("unseen class {} has no side information", source.classes()[class].id)))
}

/// Fixed latent training set following `plan`.
///
/// Every class draws from its own substream of `seed`, so the rows of one
/// class do not depend on how many rows other classes requested. Unseen
/// classes listed in `shots` additionally contribute `per_seen_class`
/// encodings of their released image features.
pub fn build_fixed<S: GzslSource + ?Sized>(
    model: &Checkpoint,
    source: &S,
    assignment: &SideInfoAssignment,
    plan: &SamplingPlan,
    shots: &ShotPool,
    seed: u64,
) -> Result<LatentDataset> {
    let image = vae_for(model, ModalityId::ImageFeature)?;
    let by_class = source.indices_by_class(Split::TrainSeen);
    let root = SeededRng::new(seed);
    let mut out = LatentDataset::empty(model.latent_dim);

    for &k in &source.seen_classes() {
        if plan.per_seen_class == 0 {
            continue;
        }
        let pool = &by_class[k];
        if pool.is_empty() {
            return Err(Error::contract(format!("seen class {} has no training features", source.classes()[k].id)));
        }
        let mut rng = root.fork(source.classes()[k].id as u64);
        let rows: Vec<usize> = pick(pool.len(), plan.per_seen_class, &mut rng)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        let z = encode_sampled(image, &source.feature_rows(Split::TrainSeen, &rows), &mut rng)?;
        out.push_block(&z, k, ModalityId::ImageFeature);
    }

    for &k in &source.unseen_classes() {
        let mut rng = root.fork(source.classes()[k].id as u64);
        if plan.per_unseen_class > 0 {
            let (m, e) = side_embedding(source, assignment, k)?;
            let x = Matrix::from_vec(1, e.len(), e.to_vec())?;
            let rows = vec![0; plan.per_unseen_class];
            let z = encode_sampled(vae_for(model, m)?, &x.select_rows(&rows), &mut rng)?;
            out.push_block(&z, k, m);
        }
        let released = shots.shots(k);
        if !released.is_empty() && plan.per_seen_class > 0 {
            let mut shot_rng = rng.fork(1);
            let rows: Vec<usize> = pick(released.len(), plan.per_seen_class, &mut shot_rng)
                .into_iter()
                .map(|i| released[i])
                .collect();
            let z = encode_sampled(image, &source.feature_rows(Split::TestUnseen, &rows), &mut shot_rng)?;
            out.push_block(&z, k, ModalityId::ImageFeature);
        }
    }
    Ok(out)
}

/// Deterministic (posterior mean) encodings of the listed rows of `split`.
pub fn encode_eval_set<S: GzslSource + ?Sized>(
    model: &Checkpoint,
    source: &S,
    split: Split,
    rows: &[usize],
) -> Result<LatentDataset> {
    let image = vae_for(model, ModalityId::ImageFeature)?;
    let x = source.feature_rows(split, rows);
    let g = image.encode(&x)?;
    let labels = source.labels(split);
    Ok(LatentDataset {
        vectors: g.mu,
        labels: rows.iter().map(|&i| labels[i]).collect(),
        provenance: vec![ModalityId::ImageFeature; rows.len()],
    })
}

/// Endless stream of class-balanced latent batches with fresh noise.
///
/// Classes are visited round-robin over seen ∪ unseen (in class-index
/// order), so any window of `batch_size` rows has a class histogram that is
/// uniform up to ±1. Unseen classes with released shots alternate between
/// side information and a shot image.
pub struct DynamicStream<'a, S: GzslSource + ?Sized> {
    model: &'a Checkpoint,
    source: &'a S,
    assignment: &'a SideInfoAssignment,
    shots: &'a ShotPool,
    classes: Vec<usize>,
    seen_pools: Vec<Vec<usize>>,
    batch_size: usize,
    cursor: usize,
    visits: Vec<usize>,
    rng: SeededRng,
    last_position: u128,
}

impl<'a, S: GzslSource + ?Sized> DynamicStream<'a, S> {
    pub fn new(
        model: &'a Checkpoint,
        source: &'a S,
        assignment: &'a SideInfoAssignment,
        shots: &'a ShotPool,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::contract("batch_size must be positive"));
        }
        vae_for(model, ModalityId::ImageFeature)?;
        let seen_pools = source.indices_by_class(Split::TrainSeen);
        let classes: Vec<usize> = (0..source.classes().len()).collect();
        for &k in &classes {
            if source.classes()[k].seen && seen_pools[k].is_empty() {
                return Err(Error::contract(format!("seen class {} has no training features", source.classes()[k].id)));
            }
            if !source.classes()[k].seen {
                vae_for(model, assignment.per_class[k])?;
                if !source.has_embedding(assignment.per_class[k], k) {
                    return Err(Error::contract(format!(
                        "unseen class {} has no side information",
                        source.classes()[k].id
                    )));
                }
            }
        }
        let n = classes.len();
        let rng = SeededRng::new(seed).fork(0xd1a);
        Ok(Self {
            model,
            source,
            assignment,
            shots,
            classes,
            seen_pools,
            batch_size,
            cursor: 0,
            visits: vec![0; n],
            last_position: rng.position(),
            rng,
        })
    }

    /// Noise-stream position; strictly increases with every batch.
    pub fn position(&self) -> u128 {
        self.rng.position()
    }

    pub fn next_batch(&mut self) -> Result<LatentDataset> {
        // rows grouped by (split, modality) so each group is encoded at once
        let mut image_train: Vec<(usize, usize)> = Vec::new();
        let mut image_shot: Vec<(usize, usize)> = Vec::new();
        let mut side: Vec<(usize, usize)> = Vec::new();
        for slot in 0..self.batch_size {
            let k = self.classes[self.cursor];
            self.cursor = (self.cursor + 1) % self.classes.len();
            let visit = self.visits[k];
            self.visits[k] += 1;
            if self.source.classes()[k].seen {
                let pool = &self.seen_pools[k];
                image_train.push((slot, pool[self.rng.below(pool.len())]));
            } else {
                let released = self.shots.shots(k);
                if !released.is_empty() && visit % 2 == 1 {
                    image_shot.push((slot, released[self.rng.below(released.len())]));
                } else {
                    side.push((slot, k));
                }
            }
        }

        let dim = self.model.latent_dim;
        let mut vectors = Matrix::zeros(self.batch_size, dim);
        let mut labels = vec![0; self.batch_size];
        let mut provenance = vec![ModalityId::ImageFeature; self.batch_size];
        let image = vae_for(self.model, ModalityId::ImageFeature)?;
        for (split, group) in [(Split::TrainSeen, &image_train), (Split::TestUnseen, &image_shot)] {
            if group.is_empty() {
                continue;
            }
            let rows: Vec<usize> = group.iter().map(|g| g.1).collect();
            let z = encode_sampled(image, &self.source.feature_rows(split, &rows), &mut self.rng)?;
            let all_labels = self.source.labels(split);
            for (i, &(slot, row)) in group.iter().enumerate() {
                vectors.row_mut(slot).copy_from_slice(z.row(i));
                labels[slot] = all_labels[row];
            }
        }
        for &(slot, k) in &side {
            let (m, e) = side_embedding(self.source, self.assignment, k)?;
            let x = Matrix::from_vec(1, e.len(), e.to_vec())?;
            let z = encode_sampled(vae_for(self.model, m)?, &x, &mut self.rng)?;
            vectors.row_mut(slot).copy_from_slice(z.row(0));
            labels[slot] = k;
            provenance[slot] = m;
        }
        let position = self.rng.position();
        assert!(position > self.last_position, "noise stream must advance between batches");
        self.last_position = position;
        Ok(LatentDataset {
            vectors,
            labels,
            provenance,
        })
    }
}

impl<S: GzslSource + ?Sized> Iterator for DynamicStream<'_, S> {
    type Item = Result<LatentDataset>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_batch())
    }
}
