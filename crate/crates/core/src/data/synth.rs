use super::{ClassInfo, GzslDataset, ModalityTable, Samples};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};
use crate::vae::ModalityId;

/// Parameters of the synthetic GZSL generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_seen: usize,
    pub n_unseen: usize,
    pub feat_dim: usize,
    pub attr_dim: usize,
    pub samples_per_class: usize,
    pub noise_sigma: f64,
    /// Width of an optional second side-information table; 0 disables it.
    pub sentence_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_seen: 20,
            n_unseen: 5,
            feat_dim: 64,
            attr_dim: 16,
            samples_per_class: 100,
            noise_sigma: 0.1,
            sentence_dim: 0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_seen == 0 || self.feat_dim == 0 || self.attr_dim == 0 || self.samples_per_class == 0 {
            return Err(Error::contract("synthetic dataset sizes must be positive"));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::contract(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }

    /// Held-out seen samples per class (20%, rounded).
    pub fn test_seen_per_class(&self) -> usize {
        (self.samples_per_class as f64 * 0.2).round() as usize
    }
}

// published features are f32; generate at that precision so a dataset equals
// its own container round trip
fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

/// Synthetic dataset where image features are a fixed random linear map of
/// the class attributes plus isotropic Gaussian noise.
///
/// Attributes are uniform in `[0, 1]^attr_dim`, the map has standard normal
/// entries, and a random subset of `n_unseen` classes is held out as unseen.
/// 20% of each seen class's samples form `test_seen`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<GzslDataset> {
    cfg.validate()?;
    let n_classes = cfg.n_seen + cfg.n_unseen;
    let mut rng = SeededRng::new(cfg.seed);

    let projection = rng.gaussian_matrix(cfg.feat_dim, cfg.attr_dim);
    let attributes = Matrix::from_vec(
        n_classes,
        cfg.attr_dim,
        (0..n_classes * cfg.attr_dim).map(|_| f32_round(rng.uniform())).collect(),
    )?;

    let mut order: Vec<usize> = (0..n_classes).collect();
    rng.shuffle(&mut order);
    let mut seen = vec![true; n_classes];
    for &k in &order[..cfg.n_unseen] {
        seen[k] = false;
    }
    let classes = (0..n_classes)
        .map(|k| ClassInfo {
            id: k as u32,
            name: format!("class_{k:03}"),
            seen: seen[k],
        })
        .collect();

    // class prototypes P·a
    let prototypes = attributes.matmul_nt(&projection)?;

    let mut modalities = vec![ModalityTable {
        modality: ModalityId::Attribute,
        embeddings: attributes.clone(),
        present: vec![true; n_classes],
    }];
    if cfg.sentence_dim > 0 {
        let scale = 1.0 / (cfg.attr_dim as f64).sqrt();
        let mixing = rng.gaussian_matrix(cfg.sentence_dim, cfg.attr_dim).map(|v| v * scale);
        modalities.push(ModalityTable {
            modality: ModalityId::Sentence,
            embeddings: attributes.matmul_nt(&mixing)?.map(f32_round),
            present: vec![true; n_classes],
        });
    }

    let n_test = cfg.test_seen_per_class();
    let mut splits = [Vec::new(), Vec::new(), Vec::new()];
    let mut labels = [Vec::new(), Vec::new(), Vec::new()];
    for k in 0..n_classes {
        for s in 0..cfg.samples_per_class {
            let which = if !seen[k] {
                2
            } else if s < cfg.samples_per_class - n_test {
                0
            } else {
                1
            };
            for &p in prototypes.row(k) {
                splits[which].push(f32_round(p + cfg.noise_sigma * rng.standard_normal()));
            }
            labels[which].push(k);
        }
    }
    let [train_l, test_l, unseen_l] = labels;
    let [train_f, test_f, unseen_f] = splits;
    let make = |data: Vec<f64>, labels: Vec<usize>| -> Result<Samples> {
        Ok(Samples {
            features: Matrix::from_vec(labels.len(), cfg.feat_dim, data)?,
            labels,
        })
    };
    GzslDataset::new(
        cfg.feat_dim,
        classes,
        modalities,
        make(train_f, train_l)?,
        make(test_f, test_l)?,
        make(unseen_f, unseen_l)?,
    )
}
