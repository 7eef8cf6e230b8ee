//! Training loop for a set of aligned modality VAEs.
//!
//! Every batch row pairs one seen-class image feature with the side
//! information of its class. Schedule weights are evaluated once per epoch
//! (0-based), before that epoch's batches, and all encoder/decoder
//! parameters share one Adam optimizer.

use std::fmt::Write as _;
use std::path::Path;

use crate::alignment::{cada_loss, ModalBatch, ModalView, Schedules, Variant, VariantFlags};
use crate::data::{GzslSource, SideInfoAssignment, Split};
use crate::error::{Error, Result};
use crate::numerics::{AdamState, Matrix, ParamRef, SeededRng};
use crate::vae::{ModalityId, ModalityVae, VaeConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub flags: VariantFlags,
    pub schedules: Schedules,
    pub vae: VaeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 50,
            learning_rate: 1.5e-4,
            seed: 0,
            flags: Variant::Cada.flags(),
            schedules: Schedules::default(),
            vae: VaeConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Larger architecture with a 128-d latent space and batches of 128.
    pub fn imagenet() -> Self {
        Self {
            batch_size: 128,
            vae: VaeConfig::imagenet(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::contract("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::contract(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        self.schedules.validate()?;
        self.vae.validate()
    }
}

/// Per-epoch averages over batches, plus the weights in force.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub vae: f64,
    pub ca: f64,
    pub da: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub records: Vec<EpochRecord>,
}

impl LossTrace {
    pub const CSV_HEADER: &'static str = "epoch,total,vae,ca,da,beta,gamma,delta";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.epoch, r.total, r.vae, r.ca, r.da, r.beta, r.gamma, r.delta
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.records.iter().all(|r| {
            [r.total, r.vae, r.ca, r.da, r.beta, r.gamma, r.delta]
                .iter()
                .all(|v| v.is_finite())
        })
    }
}

/// Shuffles the seen training samples and cuts them into batches of
/// indices into [`Split::TrainSeen`]. The last batch may be short.
pub fn make_batches<S: GzslSource + ?Sized>(source: &S, batch_size: usize, rng: &mut SeededRng) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::contract("batch_size must be positive"));
    }
    let mut order: Vec<usize> = (0..source.labels(Split::TrainSeen).len()).collect();
    rng.shuffle(&mut order);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Modalities trained for `assignment`: image features first, then the
/// side-information kinds in code order.
pub fn model_modalities(assignment: &SideInfoAssignment) -> Vec<ModalityId> {
    std::iter::once(ModalityId::ImageFeature)
        .chain(assignment.modalities())
        .collect()
}

/// Builds the multi-modal batch for the given training rows. View `m`
/// carries the rows whose class is paired with `modalities[m]`.
pub fn materialize_batch<S: GzslSource + ?Sized>(
    source: &S,
    assignment: &SideInfoAssignment,
    modalities: &[ModalityId],
    rows: &[usize],
) -> Result<ModalBatch> {
    let all_labels = source.labels(Split::TrainSeen);
    let labels: Vec<usize> = rows.iter().map(|&i| all_labels[i]).collect();
    let mut views = Vec::with_capacity(modalities.len());
    for &m in modalities {
        if m == ModalityId::ImageFeature {
            views.push(ModalView {
                data: source.feature_rows(Split::TrainSeen, rows),
                rows: (0..rows.len()).collect(),
            });
            continue;
        }
        let mut present = Vec::new();
        let mut data = Vec::new();
        let mut dim = 0;
        for (k, &label) in labels.iter().enumerate() {
            if assignment.per_class[label] != m {
                continue;
            }
            let e = source.embedding(m, label).ok_or_else(|| {
                Error::contract(format!("class {} has no {m} embedding", source.classes()[label].id))
            })?;
            dim = e.len();
            data.extend_from_slice(e);
            present.push(k);
        }
        if present.is_empty() {
            dim = source
                .modality_dims()
                .iter()
                .find(|d| d.0 == m)
                .map(|d| d.1)
                .unwrap_or(0);
        }
        views.push(ModalView {
            data: Matrix::from_vec(present.len(), dim, data)?,
            rows: present,
        });
    }
    ModalBatch::new(labels, views)
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub vaes: Vec<ModalityVae>,
    pub trace: LossTrace,
}

// substream labels
const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

/// Fresh VAEs for every modality in `assignment`.
pub fn init_vaes<S: GzslSource + ?Sized>(
    source: &S,
    assignment: &SideInfoAssignment,
    config: &VaeConfig,
    seed: u64,
) -> Result<Vec<ModalityVae>> {
    let mut rng = SeededRng::new(seed).fork(INIT_STREAM);
    let dims = source.modality_dims();
    model_modalities(assignment)
        .into_iter()
        .map(|m| {
            let dim = if m == ModalityId::ImageFeature {
                source.feat_dim()
            } else {
                dims.iter()
                    .find(|d| d.0 == m)
                    .map(|d| d.1)
                    .ok_or_else(|| Error::contract(format!("dataset has no {m} table")))?
            };
            ModalityVae::new(m, dim, config, &mut rng)
        })
        .collect()
}

/// Trains one VAE per modality on seen-class data only.
pub fn train<S: GzslSource + ?Sized>(source: &S, assignment: &SideInfoAssignment, config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    if source.labels(Split::TrainSeen).is_empty() {
        return Err(Error::contract("no seen-class training samples"));
    }
    for &k in &source.seen_classes() {
        let m = assignment.per_class[k];
        if !source.has_embedding(m, k) {
            return Err(Error::contract(format!(
                "seen class {} has no {m} side information",
                source.classes()[k].id
            )));
        }
    }
    let modalities = model_modalities(assignment);
    let mut vaes = init_vaes(source, assignment, &config.vae, config.seed)?;
    let mut adam = AdamState::new(config.learning_rate);
    let root = SeededRng::new(config.seed);
    let mut trace = LossTrace::default();

    for epoch in 0..config.epochs {
        let weights = config.schedules.weights_at(epoch);
        let batches = make_batches(source, config.batch_size, &mut root.fork(SHUFFLE_STREAM).fork(epoch as u64))?;
        let mut noise_rng = root.fork(NOISE_STREAM).fork(epoch as u64);
        let mut sums = [0.0f64; 4];
        for (b, rows) in batches.iter().enumerate() {
            let batch = materialize_batch(source, assignment, &modalities, rows)?;
            let out = cada_loss(&vaes, &batch, weights, config.flags, &mut noise_rng)?;
            if !out.breakdown.is_finite() {
                return Err(Error::Numeric(format!("training loss at epoch {epoch}, batch {b}")));
            }
            let mut refs: Vec<ParamRef<'_>> = Vec::new();
            for (vae, grads) in vaes.iter_mut().zip(&out.grads) {
                let name = vae.modality.name();
                let ModalityVae { encoder, decoder, .. } = vae;
                refs.extend(encoder.param_refs(&grads.encoder, &format!("{name}.encoder")));
                refs.extend(decoder.param_refs(&grads.decoder, &format!("{name}.decoder")));
            }
            adam.step(&mut refs).map_err(|e| match e {
                Error::Numeric(what) => Error::Numeric(format!("{what} at epoch {epoch}, batch {b}")),
                other => other,
            })?;
            let bd = out.breakdown;
            for (s, v) in sums.iter_mut().zip([bd.total, bd.vae, bd.ca, bd.da]) {
                *s += v;
            }
        }
        let n = batches.len() as f64;
        let record = EpochRecord {
            epoch,
            total: sums[0] / n,
            vae: sums[1] / n,
            ca: sums[2] / n,
            da: sums[3] / n,
            beta: weights.beta,
            gamma: weights.gamma,
            delta: weights.delta,
        };
        log::debug!(
            "epoch {epoch}: total {:.4} vae {:.4} ca {:.4} da {:.4}",
            record.total,
            record.vae,
            record.ca,
            record.da
        );
        trace.records.push(record);
    }
    Ok(TrainOutput { vaes, trace })
}
