//! Latent-space alignment between modality VAEs.
//!
//! Two terms tie the per-modality latent spaces together:
//!
//! - **cross-alignment**: a latent sample encoded from modality `i` is decoded
//!   by the decoder of every other modality `j` and compared (L1) with the
//!   same-class sample of modality `j`;
//! - **distribution alignment**: the 2-Wasserstein distance between the
//!   per-sample diagonal Gaussians of two modalities, which for diagonal
//!   covariances reduces to
//!   `sqrt(‖μ₁ − μ₂‖² + ‖σ₁ − σ₂‖²)`.
//!
//! Both sums run over ordered modality pairs, so each unordered pair is
//! counted twice. The combined objective is
//! `L_vae(β) + γ·L_ca + δ·L_da`, each term averaged over the batch.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, MlpCache, MlpGrads, SeededRng};
use crate::vae::{gaussian_output_grad, l1_grad, l1_sum, DiagGaussian, GaussianBatch, ModalityVae, VaeGrads};

/// Weights of the KL, cross-alignment and distribution-alignment terms.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossWeights {
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.beta, self.gamma, self.delta].iter().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::contract(format!("loss weights must be non-negative: {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Beta,
    Gamma,
    Delta,
}

/// Linear warm-up: 0 until `start_epoch`, then growing by `rate_per_epoch`
/// until `end_epoch`, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub start_epoch: usize,
    pub end_epoch: usize,
    pub rate_per_epoch: f64,
}

impl Schedule {
    pub fn new(kind: ScheduleKind, start_epoch: usize, end_epoch: usize, rate_per_epoch: f64) -> Result<Self> {
        let s = Self {
            kind,
            start_epoch,
            end_epoch,
            rate_per_epoch,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.start_epoch > self.end_epoch || !(self.rate_per_epoch >= 0.0) || !self.rate_per_epoch.is_finite() {
            return Err(Error::contract(format!("invalid schedule {self:?}")));
        }
        Ok(())
    }

    /// KL weight: 0.0026 per epoch up to epoch 90.
    pub fn beta_default() -> Self {
        Self {
            kind: ScheduleKind::Beta,
            start_epoch: 0,
            end_epoch: 90,
            rate_per_epoch: 0.0026,
        }
    }

    /// Cross-alignment weight: 0.044 per epoch from epoch 21 to 75.
    pub fn gamma_default() -> Self {
        Self {
            kind: ScheduleKind::Gamma,
            start_epoch: 21,
            end_epoch: 75,
            rate_per_epoch: 0.044,
        }
    }

    /// Distribution-alignment weight: 0.54 per epoch from epoch 6 to 22.
    pub fn delta_default() -> Self {
        Self {
            kind: ScheduleKind::Delta,
            start_epoch: 6,
            end_epoch: 22,
            rate_per_epoch: 0.54,
        }
    }

    pub fn value(&self, epoch: usize) -> f64 {
        if epoch <= self.start_epoch {
            0.0
        } else {
            self.rate_per_epoch * (epoch.min(self.end_epoch) - self.start_epoch) as f64
        }
    }
}

/// Free-function form of [`Schedule::value`].
pub fn schedule_value(s: &Schedule, epoch: usize) -> f64 {
    s.value(epoch)
}

/// The three warm-up schedules used during training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedules {
    pub beta: Schedule,
    pub gamma: Schedule,
    pub delta: Schedule,
}

impl Default for Schedules {
    fn default() -> Self {
        Self {
            beta: Schedule::beta_default(),
            gamma: Schedule::gamma_default(),
            delta: Schedule::delta_default(),
        }
    }
}

impl Schedules {
    pub fn weights_at(&self, epoch: usize) -> LossWeights {
        LossWeights {
            beta: self.beta.value(epoch),
            gamma: self.gamma.value(epoch),
            delta: self.delta.value(epoch),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.beta.validate()?;
        self.gamma.validate()?;
        self.delta.validate()
    }
}

/// Which alignment terms are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VariantFlags {
    pub use_ca: bool,
    pub use_da: bool,
}

/// Named model variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Plain per-modality VAEs, no alignment.
    Vae,
    /// Distribution alignment only.
    Da,
    /// Cross-alignment only.
    Ca,
    /// Both alignment terms.
    Cada,
}

impl Variant {
    pub fn flags(self) -> VariantFlags {
        let (use_ca, use_da) = match self {
            Variant::Vae => (false, false),
            Variant::Da => (false, true),
            Variant::Ca => (true, false),
            Variant::Cada => (true, true),
        };
        VariantFlags { use_ca, use_da }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vae => "vae",
            Variant::Da => "da",
            Variant::Ca => "ca",
            Variant::Cada => "cada",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vae" => Ok(Variant::Vae),
            "da" | "da-vae" => Ok(Variant::Da),
            "ca" | "ca-vae" => Ok(Variant::Ca),
            "cada" | "cada-vae" => Ok(Variant::Cada),
            other => Err(Error::contract(format!("unknown variant '{other}' (expected da, ca or cada)"))),
        }
    }
}

/// Closed-form 2-Wasserstein distance between two diagonal Gaussians.
pub fn wasserstein2_diag(g1: &DiagGaussian, g2: &DiagGaussian) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::dim("wasserstein2_diag", g1.dim(), g2.dim()));
    }
    Ok(w2_rows(&g1.mu, &g1.log_var, &g2.mu, &g2.log_var))
}

fn w2_rows(mu1: &[f64], lv1: &[f64], mu2: &[f64], lv2: &[f64]) -> f64 {
    let mut sq = 0.0;
    for d in 0..mu1.len() {
        let dm = mu1[d] - mu2[d];
        let ds = (0.5 * lv1[d]).exp() - (0.5 * lv2[d]).exp();
        sq += dm * dm + ds * ds;
    }
    sq.sqrt()
}

/// Mean over rows of `Σ_i Σ_{j≠i} W(g_i, g_j)` for fully aligned batches.
pub fn da_loss(gaussians: &[GaussianBatch]) -> Result<f64> {
    let Some(first) = gaussians.first() else {
        return Ok(0.0);
    };
    for g in gaussians {
        if g.len() != first.len() || g.latent_dim() != first.latent_dim() {
            return Err(Error::dim(
                "da_loss",
                format!("{}x{}", first.len(), first.latent_dim()),
                format!("{}x{}", g.len(), g.latent_dim()),
            ));
        }
    }
    if first.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for r in 0..first.len() {
        for (i, gi) in gaussians.iter().enumerate() {
            for (j, gj) in gaussians.iter().enumerate() {
                if i != j {
                    total += w2_rows(gi.mu.row(r), gi.log_var.row(r), gj.mu.row(r), gj.log_var.row(r));
                }
            }
        }
    }
    Ok(total / first.len() as f64)
}

/// Data of one modality for a subset of batch rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalView {
    pub data: Matrix,
    /// Batch rows present in `data`, strictly increasing.
    pub rows: Vec<usize>,
}

/// A multi-modal batch. Row `k` of every view belongs to the class
/// `labels[view.rows[k]]`; modalities may be missing for some rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalBatch {
    labels: Vec<usize>,
    views: Vec<ModalView>,
}

impl ModalBatch {
    pub fn new(labels: Vec<usize>, views: Vec<ModalView>) -> Result<Self> {
        for (m, v) in views.iter().enumerate() {
            if v.data.rows() != v.rows.len() {
                return Err(Error::dim("ModalBatch view rows", v.rows.len(), v.data.rows()));
            }
            if v.rows.windows(2).any(|w| w[0] >= w[1]) || v.rows.last().is_some_and(|&r| r >= labels.len()) {
                return Err(Error::contract(format!(
                    "modality {m}: row indices must be increasing and below {}",
                    labels.len()
                )));
            }
        }
        Ok(Self { labels, views })
    }

    /// Batch where every modality has every row. Each entry pairs the data
    /// with the labels of its rows; they must all agree.
    pub fn aligned(per_modality: Vec<(Matrix, Vec<usize>)>) -> Result<Self> {
        let labels = per_modality.first().map(|(_, l)| l.clone()).unwrap_or_default();
        let mut views = Vec::with_capacity(per_modality.len());
        for (m, (data, l)) in per_modality.into_iter().enumerate() {
            if l != labels {
                return Err(Error::contract(format!(
                    "modality {m} rows are not paired with the same classes as modality 0"
                )));
            }
            views.push(ModalView {
                data,
                rows: (0..labels.len()).collect(),
            });
        }
        Self::new(labels, views)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn views(&self) -> &[ModalView] {
        &self.views
    }

    /// The same batch with modalities reordered: `order[k]` is the old index
    /// of the new `k`-th modality.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            labels: self.labels.clone(),
            views: order.iter().map(|&i| self.views[i].clone()).collect(),
        }
    }
}

/// Reparametrization noise for every view of `batch`.
pub fn draw_noise(vaes: &[ModalityVae], batch: &ModalBatch, rng: &mut SeededRng) -> Vec<Matrix> {
    vaes.iter()
        .zip(batch.views())
        .map(|(vae, view)| rng.gaussian_matrix(view.rows.len(), vae.latent_dim()))
        .collect()
}

/// Loss components; `vae` already includes the β-weighted KL term while
/// `ca` and `da` are unweighted.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub vae: f64,
    pub ca: f64,
    pub da: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.vae.is_finite() && self.ca.is_finite() && self.da.is_finite()
    }
}

#[derive(Clone, Debug)]
pub struct CadaLoss {
    pub breakdown: LossBreakdown,
    /// One entry per VAE, in input order.
    pub grads: Vec<VaeGrads>,
}

/// Cross-alignment loss only (no gradients).
pub fn ca_loss(vaes: &[ModalityVae], batch: &ModalBatch, rng: &mut SeededRng) -> Result<f64> {
    let noise = draw_noise(vaes, batch, rng);
    ca_loss_with_noise(vaes, batch, &noise)
}

/// [`ca_loss`] with caller-supplied noise.
pub fn ca_loss_with_noise(vaes: &[ModalityVae], batch: &ModalBatch, noise: &[Matrix]) -> Result<f64> {
    let flags = VariantFlags {
        use_ca: true,
        use_da: false,
    };
    let state = Forward::run(vaes, batch, noise)?;
    Ok(state.cross_terms(vaes, batch, flags)?.ca)
}

/// Combined objective and its gradients, drawing noise from `rng`.
pub fn cada_loss(
    vaes: &[ModalityVae],
    batch: &ModalBatch,
    weights: LossWeights,
    flags: VariantFlags,
    rng: &mut SeededRng,
) -> Result<CadaLoss> {
    let noise = draw_noise(vaes, batch, rng);
    cada_loss_with_noise(vaes, batch, weights, flags, &noise)
}

/// [`cada_loss`] with caller-supplied noise, one matrix per view.
pub fn cada_loss_with_noise(
    vaes: &[ModalityVae],
    batch: &ModalBatch,
    weights: LossWeights,
    flags: VariantFlags,
    noise: &[Matrix],
) -> Result<CadaLoss> {
    weights.validate()?;
    let fwd = Forward::run(vaes, batch, noise)?;
    let n = batch.len().max(1) as f64;

    // (encoder, decoder) gradients, filled by the first contribution
    let mut partial: Vec<(Option<MlpGrads>, Option<MlpGrads>)> = vec![(None, None); vaes.len()];
    let mut grad_z: Vec<Matrix> = fwd.z.iter().map(|z| Matrix::zeros(z.rows(), z.cols())).collect();
    let mut grad_enc: Vec<Matrix> = fwd
        .gaussians
        .iter()
        .map(|g| Matrix::zeros(g.len(), 2 * g.latent_dim()))
        .collect();

    // per-modality reconstruction + KL
    let mut vae_term = 0.0;
    for (i, vae) in vaes.iter().enumerate() {
        let x = &batch.views[i].data;
        if x.rows() == 0 {
            continue;
        }
        let (x_hat, cache) = vae.decoder.forward(&fwd.z[i])?;
        let kl_sum: f64 = (0..fwd.gaussians[i].len())
            .map(|r| {
                let g = &fwd.gaussians[i];
                0.5 * g
                    .mu
                    .row(r)
                    .iter()
                    .zip(g.log_var.row(r))
                    .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
                    .sum::<f64>()
            })
            .sum();
        vae_term += (l1_sum(x, &x_hat)? + weights.beta * kl_sum) / n;
        let (dec_grads, gz) = vae.decoder.backward(&cache, &l1_grad(x, &x_hat, 1.0 / n))?;
        add_into(&mut partial[i].1, dec_grads)?;
        grad_z[i].add_scaled(&gz, 1.0)?;
    }

    let cross = fwd.cross_terms(vaes, batch, flags)?;

    if flags.use_ca && weights.gamma > 0.0 {
        for pass in &cross.ca_passes {
            let (j, i) = (pass.decoder, pass.source);
            let target = batch.views[j].data.select_rows(&pass.target_pos);
            let upstream = l1_grad(&target, &pass.output, weights.gamma / n);
            let (dec_grads, gz) = vaes[j].decoder.backward(&pass.cache, &upstream)?;
            add_into(&mut partial[j].1, dec_grads)?;
            for (k, &p) in pass.source_pos.iter().enumerate() {
                for (a, b) in grad_z[i].row_mut(p).iter_mut().zip(gz.row(k)) {
                    *a += b;
                }
            }
        }
    }

    if flags.use_da && weights.delta > 0.0 {
        for (i, j, common) in fwd.pairs(batch) {
            let (gi, gj) = (&fwd.gaussians[i], &fwd.gaussians[j]);
            let latent = gi.latent_dim();
            for &(pi, pj) in &common {
                let w = w2_rows(gi.mu.row(pi), gi.log_var.row(pi), gj.mu.row(pj), gj.log_var.row(pj));
                if w == 0.0 {
                    // subgradient 0 at coincident distributions
                    continue;
                }
                // ordered pairs (i, j) and (j, i) contribute equally
                let coef = 2.0 * weights.delta / (n * w);
                for d in 0..latent {
                    let dm = gi.mu.get(pi, d) - gj.mu.get(pj, d);
                    let si = (0.5 * gi.log_var.get(pi, d)).exp();
                    let sj = (0.5 * gj.log_var.get(pj, d)).exp();
                    let ds = si - sj;
                    grad_enc[i].row_mut(pi)[d] += coef * dm;
                    grad_enc[j].row_mut(pj)[d] -= coef * dm;
                    grad_enc[i].row_mut(pi)[latent + d] += coef * ds * 0.5 * si;
                    grad_enc[j].row_mut(pj)[latent + d] -= coef * ds * 0.5 * sj;
                }
            }
        }
    }

    for (i, vae) in vaes.iter().enumerate() {
        if batch.views[i].data.rows() == 0 {
            continue;
        }
        let mut g = gaussian_output_grad(&fwd.gaussians[i], &noise[i], &grad_z[i], weights.beta / n);
        g.add_scaled(&grad_enc[i], 1.0)?;
        let enc_grads = vae.encoder.backward_params(&fwd.enc_caches[i], &g)?;
        add_into(&mut partial[i].0, enc_grads)?;
    }
    let grads = vaes
        .iter()
        .zip(partial)
        .map(|(vae, (enc, dec))| VaeGrads {
            encoder: enc.unwrap_or_else(|| MlpGrads::zeros_like(&vae.encoder)),
            decoder: dec.unwrap_or_else(|| MlpGrads::zeros_like(&vae.decoder)),
        })
        .collect();

    let ca = if flags.use_ca { cross.ca } else { 0.0 };
    let da = if flags.use_da { cross.da } else { 0.0 };
    let total = vae_term + weights.gamma * ca + weights.delta * da;
    Ok(CadaLoss {
        breakdown: LossBreakdown {
            total,
            vae: vae_term,
            ca,
            da,
        },
        grads,
    })
}

fn add_into(slot: &mut Option<MlpGrads>, grads: MlpGrads) -> Result<()> {
    match slot {
        Some(acc) => acc.accumulate(&grads),
        None => {
            *slot = Some(grads);
            Ok(())
        }
    }
}

/// Encoder outputs and latent samples for every view.
struct Forward {
    gaussians: Vec<GaussianBatch>,
    enc_caches: Vec<MlpCache>,
    z: Vec<Matrix>,
}

struct CrossPass {
    source: usize,
    decoder: usize,
    source_pos: Vec<usize>,
    target_pos: Vec<usize>,
    output: Matrix,
    cache: MlpCache,
}

struct CrossTerms {
    ca: f64,
    da: f64,
    ca_passes: Vec<CrossPass>,
}

impl Forward {
    fn run(vaes: &[ModalityVae], batch: &ModalBatch, noise: &[Matrix]) -> Result<Self> {
        if vaes.len() != batch.views.len() || noise.len() != vaes.len() {
            return Err(Error::dim(
                "cada_loss modalities",
                format!("{} VAEs", vaes.len()),
                format!("{} views / {} noise matrices", batch.views.len(), noise.len()),
            ));
        }
        if let Some(first) = vaes.first() {
            if let Some(bad) = vaes.iter().find(|v| v.latent_dim() != first.latent_dim()) {
                return Err(Error::dim("cada_loss latent", first.latent_dim(), bad.latent_dim()));
            }
        }
        let mut gaussians = Vec::with_capacity(vaes.len());
        let mut enc_caches = Vec::with_capacity(vaes.len());
        let mut z = Vec::with_capacity(vaes.len());
        for ((vae, view), eps) in vaes.iter().zip(&batch.views).zip(noise) {
            if view.data.cols() != vae.data_dim() {
                return Err(Error::dim("cada_loss view", vae.data_dim(), view.data.cols()));
            }
            let (out, cache) = vae.encoder.forward(&view.data)?;
            let g = GaussianBatch::from_encoder_output(&out, vae.latent_dim())?;
            z.push(g.reparameterize(eps)?);
            gaussians.push(g);
            enc_caches.push(cache);
        }
        Ok(Self {
            gaussians,
            enc_caches,
            z,
        })
    }

    /// Unordered modality pairs `(i, j)`, `i < j`, with the positions of
    /// their shared rows inside each view.
    fn pairs(&self, batch: &ModalBatch) -> Vec<(usize, usize, Vec<(usize, usize)>)> {
        let m = batch.views.len();
        let mut out = Vec::new();
        for i in 0..m {
            for j in (i + 1)..m {
                let common = shared_positions(&batch.views[i].rows, &batch.views[j].rows);
                if !common.is_empty() {
                    out.push((i, j, common));
                }
            }
        }
        out
    }

    fn cross_terms(&self, vaes: &[ModalityVae], batch: &ModalBatch, flags: VariantFlags) -> Result<CrossTerms> {
        let n = batch.len().max(1) as f64;
        let mut ca = 0.0;
        let mut da = 0.0;
        let mut ca_passes = Vec::new();
        for (i, j, common) in self.pairs(batch) {
            let pos_i: Vec<usize> = common.iter().map(|p| p.0).collect();
            let pos_j: Vec<usize> = common.iter().map(|p| p.1).collect();
            if flags.use_ca {
                for (src, dst, src_pos, dst_pos) in [(i, j, &pos_i, &pos_j), (j, i, &pos_j, &pos_i)] {
                    let z = self.z[src].select_rows(src_pos);
                    let (output, cache) = vaes[dst].decoder.forward(&z)?;
                    let target = batch.views[dst].data.select_rows(dst_pos);
                    ca += l1_sum(&target, &output)? / n;
                    ca_passes.push(CrossPass {
                        source: src,
                        decoder: dst,
                        source_pos: src_pos.clone(),
                        target_pos: dst_pos.clone(),
                        output,
                        cache,
                    });
                }
            }
            if flags.use_da {
                let (gi, gj) = (&self.gaussians[i], &self.gaussians[j]);
                for &(pi, pj) in &common {
                    da += 2.0 * w2_rows(gi.mu.row(pi), gi.log_var.row(pi), gj.mu.row(pj), gj.log_var.row(pj)) / n;
                }
            }
        }
        Ok(CrossTerms { ca, da, ca_passes })
    }
}

/// Positions `(a, b)` with `rows_a[a] == rows_b[b]`; both inputs sorted.
fn shared_positions(rows_a: &[usize], rows_b: &[usize]) -> Vec<(usize, usize)> {
    let (mut a, mut b) = (0, 0);
    let mut out = Vec::new();
    while a < rows_a.len() && b < rows_b.len() {
        match rows_a[a].cmp(&rows_b[b]) {
            std::cmp::Ordering::Less => a += 1,
            std::cmp::Ordering::Greater => b += 1,
            std::cmp::Ordering::Equal => {
                out.push((a, b));
                a += 1;
                b += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Activation, AffineLayer, Mlp};
    use crate::vae::{vae_loss_with_noise, ModalityId, VaeConfig};
    use proptest::prelude::*;

    fn gauss(mu: &[f64], var: &[f64]) -> DiagGaussian {
        DiagGaussian::new(mu.to_vec(), var.iter().map(|v| v.ln()).collect()).unwrap()
    }

    #[test]
    fn wasserstein_cases() {
        let g = gauss(&[0.3, -1.0], &[2.0, 0.5]);
        assert_eq!(wasserstein2_diag(&g, &g).unwrap(), 0.0);
        let w = wasserstein2_diag(&gauss(&[3.0, 4.0], &[1.0, 1.0]), &gauss(&[0.0, 0.0], &[1.0, 1.0])).unwrap();
        assert!((w - 5.0).abs() < 1e-12);
        let w = wasserstein2_diag(&gauss(&[1.0, 2.0], &[1.0, 1.0]), &gauss(&[0.0, 0.0], &[4.0, 1.0])).unwrap();
        assert!((w - 6f64.sqrt()).abs() < 1e-12);
        assert!(wasserstein2_diag(&gauss(&[0.0], &[1.0]), &gauss(&[0.0, 0.0], &[1.0, 1.0])).is_err());
    }

    fn arb_gaussian(dim: usize) -> impl Strategy<Value = DiagGaussian> {
        (
            prop::collection::vec(-3.0f64..3.0, dim),
            prop::collection::vec(-3.0f64..3.0, dim),
        )
            .prop_map(|(mu, lv)| DiagGaussian::new(mu, lv).unwrap())
    }

    proptest! {
        #[test]
        fn wasserstein_is_a_metric(a in arb_gaussian(4), b in arb_gaussian(4), c in arb_gaussian(4)) {
            let ab = wasserstein2_diag(&a, &b).unwrap();
            let ba = wasserstein2_diag(&b, &a).unwrap();
            let bc = wasserstein2_diag(&b, &c).unwrap();
            let ac = wasserstein2_diag(&a, &c).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert!(ac <= ab + bc + 1e-9);
            let mean_gap: f64 = a.mu.iter().zip(&b.mu).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(ab >= mean_gap - 1e-12);
            prop_assert_eq!(wasserstein2_diag(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn schedules_are_monotone(start in 0usize..50, len in 0usize..50, rate in 0.0f64..2.0, e in 0usize..150) {
            let s = Schedule::new(ScheduleKind::Gamma, start, start + len, rate).unwrap();
            prop_assert!(s.value(e + 1) >= s.value(e));
            prop_assert_eq!(s.value(e + 200), s.value(start + len));
        }
    }

    fn batch_of(gs: &[DiagGaussian]) -> GaussianBatch {
        GaussianBatch {
            mu: Matrix::from_rows(&[gs[0].mu.clone()]).unwrap(),
            log_var: Matrix::from_rows(&[gs[0].log_var.clone()]).unwrap(),
        }
    }

    #[test]
    fn da_loss_cases() {
        let a = gauss(&[0.1, 0.2], &[1.0, 2.0]);
        let b = gauss(&[-0.4, 0.9], &[0.5, 3.0]);
        let c = gauss(&[1.4, -0.2], &[0.7, 0.3]);
        let same = [batch_of(&[a.clone()]), batch_of(&[a.clone()]), batch_of(&[a.clone()])];
        assert_eq!(da_loss(&same).unwrap(), 0.0);
        let two = [batch_of(&[a.clone()]), batch_of(&[b.clone()])];
        assert_eq!(da_loss(&two).unwrap(), 2.0 * wasserstein2_diag(&a, &b).unwrap());
        let all = [a, b, c];
        let three: Vec<GaussianBatch> = all.iter().map(|g| batch_of(&[g.clone()])).collect();
        let mut brute = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    brute += wasserstein2_diag(&all[i], &all[j]).unwrap();
                }
            }
        }
        assert!((da_loss(&three).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn schedule_reference_values() {
        let delta = Schedule::delta_default();
        assert_eq!(delta.value(0), 0.0);
        assert_eq!(delta.value(6), 0.0);
        assert!((delta.value(14) - 4.32).abs() < 1e-12);
        assert!((delta.value(22) - 8.64).abs() < 1e-12);
        assert!((delta.value(99) - 8.64).abs() < 1e-12);
        let gamma = Schedule::gamma_default();
        assert!((gamma.value(75) - 2.376).abs() < 1e-12);
        assert!((gamma.value(90) - 2.376).abs() < 1e-12);
        let beta = Schedule::beta_default();
        assert!((beta.value(45) - 0.117).abs() < 1e-12);
        assert!((beta.value(90) - 0.234).abs() < 1e-12);
        assert!((beta.value(100) - 0.234).abs() < 1e-12);
        assert!(Schedule::new(ScheduleKind::Beta, 5, 4, 0.1).is_err());
    }

    #[test]
    fn variant_names() {
        assert_eq!("cada".parse::<Variant>().unwrap().flags(), VariantFlags { use_ca: true, use_da: true });
        assert_eq!("ca".parse::<Variant>().unwrap().flags(), VariantFlags { use_ca: true, use_da: false });
        assert_eq!("da".parse::<Variant>().unwrap().flags(), VariantFlags { use_ca: false, use_da: true });
        assert!("cda".parse::<Variant>().is_err());
    }

    fn linear(weight: &[&[f64]], bias: &[f64]) -> Mlp {
        let w = Matrix::from_rows(weight).unwrap();
        Mlp::new(vec![AffineLayer::new(w, bias.to_vec()).unwrap()], Activation::Relu).unwrap()
    }

    #[test]
    fn ca_loss_single_modality_is_zero() {
        let vae = tiny_vaes(&[3], 2, 1).remove(0);
        let x = SeededRng::new(0).gaussian_matrix(4, 3);
        let batch = ModalBatch::aligned(vec![(x, vec![0, 1, 2, 3])]).unwrap();
        assert_eq!(ca_loss(&[vae], &batch, &mut SeededRng::new(1)).unwrap(), 0.0);
    }

    #[test]
    fn ca_loss_identity_networks() {
        // encoder: mu = x, log_var = 0; decoder: identity
        let make = |m| {
            ModalityVae::from_parts(m, linear(&[&[1.0], &[0.0]], &[0.0, 0.0]), linear(&[&[1.0]], &[0.0])).unwrap()
        };
        let vaes = [make(ModalityId::ImageFeature), make(ModalityId::Attribute)];
        let batch = ModalBatch::aligned(vec![
            (Matrix::from_rows(&[[0.0]]).unwrap(), vec![7]),
            (Matrix::from_rows(&[[1.0]]).unwrap(), vec![7]),
        ])
        .unwrap();
        let noise = [Matrix::zeros(1, 1), Matrix::zeros(1, 1)];
        assert_eq!(ca_loss_with_noise(&vaes, &batch, &noise).unwrap(), 2.0);
    }

    #[test]
    fn misaligned_labels_are_rejected() {
        let r = ModalBatch::aligned(vec![(Matrix::zeros(2, 1), vec![0, 1]), (Matrix::zeros(2, 1), vec![1, 0])]);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    pub(crate) fn tiny_vaes(dims: &[usize], latent: usize, seed: u64) -> Vec<ModalityVae> {
        let cfg = VaeConfig {
            latent_dim: latent,
            image_encoder_hidden: vec![5],
            image_decoder_hidden: vec![4],
            aux_encoder_hidden: vec![3],
            aux_decoder_hidden: vec![4],
        };
        let mut rng = SeededRng::new(seed);
        let ids = [ModalityId::ImageFeature, ModalityId::Attribute, ModalityId::Sentence];
        dims.iter()
            .zip(ids)
            .map(|(&d, m)| {
                let mut v = ModalityVae::new(m, d, &cfg, &mut rng).unwrap();
                for net in [&mut v.encoder, &mut v.decoder] {
                    for l in net.layers_mut() {
                        l.bias.iter_mut().for_each(|b| *b = 0.2 * rng.standard_normal());
                    }
                }
                v
            })
            .collect()
    }

    fn aligned_batch(dims: &[usize], rows: usize, seed: u64) -> ModalBatch {
        let mut rng = SeededRng::new(seed);
        let labels: Vec<usize> = (0..rows).collect();
        ModalBatch::aligned(dims.iter().map(|&d| (rng.gaussian_matrix(rows, d), labels.clone())).collect()).unwrap()
    }

    // enumerates ordered pairs directly, using only public encode/decode
    fn ca_oracle(vaes: &[ModalityVae], batch: &ModalBatch, noise: &[Matrix]) -> f64 {
        let n = batch.len() as f64;
        let mut total = 0.0;
        for i in 0..vaes.len() {
            let z = vaes[i].encode(&batch.views()[i].data).unwrap().reparameterize(&noise[i]).unwrap();
            for j in 0..vaes.len() {
                if i == j {
                    continue;
                }
                let rec = vaes[j].decode(&z).unwrap();
                let target = &batch.views()[j].data;
                for r in 0..target.rows() {
                    for c in 0..target.cols() {
                        total += (target.get(r, c) - rec.get(r, c)).abs();
                    }
                }
            }
        }
        total / n
    }

    #[test]
    fn ca_loss_matches_pair_enumeration() {
        for seed in 0..5 {
            let dims = [4, 3, 2];
            let vaes = tiny_vaes(&dims, 2, seed);
            let batch = aligned_batch(&dims, 5, seed + 10);
            let noise = draw_noise(&vaes, &batch, &mut SeededRng::new(seed));
            let got = ca_loss_with_noise(&vaes, &batch, &noise).unwrap();
            assert!((got - ca_oracle(&vaes, &batch, &noise)).abs() < 1e-10);
        }
    }

    #[test]
    fn ca_loss_ignores_modality_order() {
        let dims = [4, 3, 2];
        let vaes = tiny_vaes(&dims, 2, 3);
        let batch = aligned_batch(&dims, 6, 4);
        let noise = draw_noise(&vaes, &batch, &mut SeededRng::new(5));
        let base = ca_loss_with_noise(&vaes, &batch, &noise).unwrap();
        let order = [2, 0, 1];
        let vaes_p: Vec<ModalityVae> = order.iter().map(|&i| vaes[i].clone()).collect();
        let noise_p: Vec<Matrix> = order.iter().map(|&i| noise[i].clone()).collect();
        let permuted = ca_loss_with_noise(&vaes_p, &batch.permuted(&order), &noise_p).unwrap();
        assert!((base - permuted).abs() < 1e-10);
    }

    #[test]
    fn zero_alignment_weights_reduce_to_vae_losses() {
        let dims = [4, 3];
        let vaes = tiny_vaes(&dims, 2, 8);
        let batch = aligned_batch(&dims, 4, 9);
        let noise = draw_noise(&vaes, &batch, &mut SeededRng::new(1));
        let weights = LossWeights { beta: 0.3, gamma: 0.0, delta: 0.0 };
        let out = cada_loss_with_noise(&vaes, &batch, weights, Variant::Cada.flags(), &noise).unwrap();
        let sum: f64 = (0..2)
            .map(|i| vae_loss_with_noise(&vaes[i], &batch.views()[i].data, 0.3, &noise[i]).unwrap().loss)
            .sum();
        assert!((out.breakdown.total - sum).abs() < 1e-12);
        for i in 0..2 {
            let single = vae_loss_with_noise(&vaes[i], &batch.views()[i].data, 0.3, &noise[i]).unwrap();
            assert_eq!(out.grads[i].decoder, single.grads.decoder);
        }
    }

    #[test]
    fn gamma_is_ignored_without_cross_alignment() {
        let dims = [4, 3];
        let vaes = tiny_vaes(&dims, 2, 8);
        let batch = aligned_batch(&dims, 4, 9);
        let noise = draw_noise(&vaes, &batch, &mut SeededRng::new(1));
        let flags = Variant::Da.flags();
        let a = cada_loss_with_noise(&vaes, &batch, LossWeights { beta: 0.1, gamma: 0.0, delta: 1.0 }, flags, &noise).unwrap();
        let b = cada_loss_with_noise(&vaes, &batch, LossWeights { beta: 0.1, gamma: 7.0, delta: 1.0 }, flags, &noise).unwrap();
        assert_eq!(a.breakdown, b.breakdown);
        assert_eq!(a.breakdown.ca, 0.0);
    }

    #[test]
    fn da_term_matches_standalone_loss() {
        let dims = [4, 3, 2];
        let vaes = tiny_vaes(&dims, 3, 2);
        let batch = aligned_batch(&dims, 5, 3);
        let noise = draw_noise(&vaes, &batch, &mut SeededRng::new(4));
        let out = cada_loss_with_noise(&vaes, &batch, LossWeights { beta: 0.0, gamma: 0.0, delta: 1.0 }, Variant::Da.flags(), &noise).unwrap();
        let gs: Vec<GaussianBatch> = vaes.iter().zip(batch.views()).map(|(v, view)| v.encode(&view.data).unwrap()).collect();
        assert!((out.breakdown.da - da_loss(&gs).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn gradients_are_linear_in_alignment_weights() {
        let dims = [4, 3];
        let vaes = tiny_vaes(&dims, 2, 12);
        let batch = aligned_batch(&dims, 4, 13);
        let noise = draw_noise(&vaes, &batch, &mut SeededRng::new(2));
        let flags = Variant::Cada.flags();
        let g = |gamma, delta| {
            cada_loss_with_noise(&vaes, &batch, LossWeights { beta: 0.2, gamma, delta }, flags, &noise)
                .unwrap()
                .grads
        };
        let base = g(0.0, 0.0);
        let one = g(1.0, 1.0);
        let two = g(2.0, 2.0);
        // two - base == 2 * (one - base)
        for i in 0..2 {
            for (nets_b, nets_1, nets_2) in [
                (&base[i].encoder, &one[i].encoder, &two[i].encoder),
                (&base[i].decoder, &one[i].decoder, &two[i].decoder),
            ] {
                for ((lb, l1), l2) in nets_b.layers.iter().zip(&nets_1.layers).zip(&nets_2.layers) {
                    for ((b, x), y) in lb.weight.data().iter().zip(l1.weight.data()).zip(l2.weight.data()) {
                        assert!(((y - b) - 2.0 * (x - b)).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn partial_views_only_align_shared_rows() {
        // modality 1 present on rows 0 and 2, modality 2 on row 1 only
        let vaes = tiny_vaes(&[3, 2, 2], 2, 1);
        let mut rng = SeededRng::new(5);
        let views = vec![
            ModalView { data: rng.gaussian_matrix(3, 3), rows: vec![0, 1, 2] },
            ModalView { data: rng.gaussian_matrix(2, 2), rows: vec![0, 2] },
            ModalView { data: rng.gaussian_matrix(1, 2), rows: vec![1] },
        ];
        let batch = ModalBatch::new(vec![0, 1, 0], views).unwrap();
        let noise = draw_noise(&vaes, &batch, &mut rng);
        let out = cada_loss_with_noise(&vaes, &batch, LossWeights { beta: 1.0, gamma: 1.0, delta: 1.0 }, Variant::Cada.flags(), &noise).unwrap();
        assert!(out.breakdown.is_finite());
        // no shared rows between modalities 1 and 2, so their pair adds nothing
        let two = ModalBatch::new(vec![0, 1, 0], batch.views()[1..].to_vec());
        assert!(two.is_ok());
    }
}
