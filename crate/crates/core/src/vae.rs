//! Per-modality variational autoencoder.
//!
//! The encoder emits `2 × latent_dim` values per sample: the mean followed by
//! the log-variance of a diagonal Gaussian. Reconstruction error is the L1
//! distance, summed over features and averaged over the batch.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Mlp, MlpGrads, SeededRng};

/// Kind of data a VAE encodes. The discriminant is the on-disk code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum ModalityId {
    ImageFeature = 0,
    Attribute = 1,
    Sentence = 2,
    WordVector = 3,
}

impl ModalityId {
    pub const ALL: [ModalityId; 4] = [
        ModalityId::ImageFeature,
        ModalityId::Attribute,
        ModalityId::Sentence,
        ModalityId::WordVector,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModalityId::ImageFeature => "image",
            ModalityId::Attribute => "attribute",
            ModalityId::Sentence => "sentence",
            ModalityId::WordVector => "wordvec",
        }
    }

    pub fn is_side_information(self) -> bool {
        self != ModalityId::ImageFeature
    }
}

impl fmt::Display for ModalityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModalityId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown modality '{s}'")))
    }
}

/// Diagonal Gaussian stored as mean and log-variance.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mu: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mu.len() != log_var.len() {
            return Err(Error::dim("DiagGaussian::new", mu.len(), log_var.len()));
        }
        Ok(Self { mu, log_var })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mu: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Per-dimension standard deviation `exp(log_var / 2)`.
    pub fn sigma(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (0.5 * lv).exp()).collect()
    }
}

/// A batch of diagonal Gaussians, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBatch {
    pub mu: Matrix,
    pub log_var: Matrix,
}

impl GaussianBatch {
    /// Splits raw encoder output into mean and log-variance halves.
    pub fn from_encoder_output(out: &Matrix, latent_dim: usize) -> Result<Self> {
        if out.cols() != 2 * latent_dim {
            return Err(Error::dim("GaussianBatch", 2 * latent_dim, out.cols()));
        }
        Ok(Self {
            mu: out.column_block(0, latent_dim),
            log_var: out.column_block(latent_dim, latent_dim),
        })
    }

    pub fn len(&self) -> usize {
        self.mu.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn latent_dim(&self) -> usize {
        self.mu.cols()
    }

    pub fn get(&self, row: usize) -> DiagGaussian {
        DiagGaussian {
            mu: self.mu.row(row).to_vec(),
            log_var: self.log_var.row(row).to_vec(),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> GaussianBatch {
        GaussianBatch {
            mu: self.mu.select_rows(rows),
            log_var: self.log_var.select_rows(rows),
        }
    }

    /// `z = μ + exp(log_var / 2) ⊙ eps`, row by row.
    pub fn reparameterize(&self, eps: &Matrix) -> Result<Matrix> {
        if eps.shape() != self.mu.shape() {
            return Err(Error::dim(
                "GaussianBatch::reparameterize",
                format!("{}x{}", self.mu.rows(), self.mu.cols()),
                format!("{}x{}", eps.rows(), eps.cols()),
            ));
        }
        let data = self
            .mu
            .data()
            .iter()
            .zip(self.log_var.data())
            .zip(eps.data())
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect();
        Matrix::from_vec(self.mu.rows(), self.mu.cols(), data)
    }
}

/// Hidden-layer widths for encoders and decoders.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub image_encoder_hidden: Vec<usize>,
    pub image_decoder_hidden: Vec<usize>,
    /// Used for every side-information modality.
    pub aux_encoder_hidden: Vec<usize>,
    pub aux_decoder_hidden: Vec<usize>,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            image_encoder_hidden: vec![1560],
            image_decoder_hidden: vec![1660],
            aux_encoder_hidden: vec![1450],
            aux_decoder_hidden: vec![660],
        }
    }
}

impl VaeConfig {
    /// Larger-scale layout: 128-d latent and two hidden layers everywhere.
    pub fn imagenet() -> Self {
        Self {
            latent_dim: 128,
            image_encoder_hidden: vec![1560, 1560],
            image_decoder_hidden: vec![1160, 1660],
            aux_encoder_hidden: vec![1450, 1450],
            aux_decoder_hidden: vec![460, 660],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            &self.image_encoder_hidden,
            &self.image_decoder_hidden,
            &self.aux_encoder_hidden,
            &self.aux_decoder_hidden,
        ];
        if self.latent_dim == 0 || all.iter().any(|h| h.contains(&0)) {
            return Err(Error::contract("VAE sizes must be positive"));
        }
        Ok(())
    }

    fn hidden_for(&self, modality: ModalityId) -> (&[usize], &[usize]) {
        match modality {
            ModalityId::ImageFeature => (&self.image_encoder_hidden, &self.image_decoder_hidden),
            _ => (&self.aux_encoder_hidden, &self.aux_decoder_hidden),
        }
    }
}

/// Encoder/decoder pair for one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityVae {
    pub modality: ModalityId,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

/// Gradients for one [`ModalityVae`].
#[derive(Clone, Debug, PartialEq)]
pub struct VaeGrads {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
}

impl VaeGrads {
    pub fn zeros_like(vae: &ModalityVae) -> Self {
        Self {
            encoder: MlpGrads::zeros_like(&vae.encoder),
            decoder: MlpGrads::zeros_like(&vae.decoder),
        }
    }
}

impl ModalityVae {
    pub fn from_parts(modality: ModalityId, encoder: Mlp, decoder: Mlp) -> Result<Self> {
        if encoder.output_dim() % 2 != 0 {
            return Err(Error::dim(
                "ModalityVae encoder output",
                "an even width",
                encoder.output_dim(),
            ));
        }
        let latent = encoder.output_dim() / 2;
        if decoder.input_dim() != latent {
            return Err(Error::dim("ModalityVae decoder input", latent, decoder.input_dim()));
        }
        if decoder.output_dim() != encoder.input_dim() {
            return Err(Error::dim(
                "ModalityVae decoder output",
                encoder.input_dim(),
                decoder.output_dim(),
            ));
        }
        Ok(Self {
            modality,
            encoder,
            decoder,
        })
    }

    /// Freshly initialised VAE using the hidden sizes from `config`.
    pub fn new(
        modality: ModalityId,
        data_dim: usize,
        config: &VaeConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        config.validate()?;
        let (enc_hidden, dec_hidden) = config.hidden_for(modality);
        let enc: Vec<usize> = std::iter::once(data_dim)
            .chain(enc_hidden.iter().copied())
            .chain(std::iter::once(2 * config.latent_dim))
            .collect();
        let dec: Vec<usize> = std::iter::once(config.latent_dim)
            .chain(dec_hidden.iter().copied())
            .chain(std::iter::once(data_dim))
            .collect();
        let encoder = Mlp::glorot(&enc, rng)?;
        let decoder = Mlp::glorot(&dec, rng)?;
        Self::from_parts(modality, encoder, decoder)
    }

    pub fn data_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim() / 2
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    pub fn encode(&self, x: &Matrix) -> Result<GaussianBatch> {
        if x.cols() != self.data_dim() {
            return Err(Error::dim("ModalityVae::encode", self.data_dim(), x.cols()));
        }
        GaussianBatch::from_encoder_output(&self.encoder.predict(x)?, self.latent_dim())
    }

    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.latent_dim() {
            return Err(Error::dim("ModalityVae::decode", self.latent_dim(), z.cols()));
        }
        self.decoder.predict(z)
    }
}

/// `z = μ + exp(log_var / 2) ⊙ eps`.
pub fn reparameterize(g: &DiagGaussian, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != g.dim() {
        return Err(Error::dim("reparameterize", g.dim(), eps.len()));
    }
    Ok(g.mu
        .iter()
        .zip(&g.log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// `KL(N(μ, diag σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − log σ²)`.
pub fn kl_to_standard_normal(g: &DiagGaussian) -> f64 {
    kl_terms(&g.mu, &g.log_var)
}

fn kl_terms(mu: &[f64], log_var: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// Mean KL over the rows of a batch.
pub fn mean_kl(g: &GaussianBatch) -> f64 {
    if g.is_empty() {
        return 0.0;
    }
    let total: f64 = (0..g.len())
        .map(|r| kl_terms(g.mu.row(r), g.log_var.row(r)))
        .sum();
    total / g.len() as f64
}

/// Mean over rows of the summed absolute differences.
pub fn reconstruction_l1(x: &Matrix, x_hat: &Matrix) -> Result<f64> {
    Ok(l1_sum(x, x_hat)? / x.rows().max(1) as f64)
}

/// Total absolute difference over all entries.
pub(crate) fn l1_sum(x: &Matrix, x_hat: &Matrix) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::dim(
            "reconstruction_l1",
            format!("{}x{}", x.rows(), x.cols()),
            format!("{}x{}", x_hat.rows(), x_hat.cols()),
        ));
    }
    Ok(x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// `scale · sign(x_hat − x)`, the gradient of `scale · Σ|x − x_hat|` with
/// respect to `x_hat` (zero where they agree).
pub(crate) fn l1_grad(x: &Matrix, x_hat: &Matrix, scale: f64) -> Matrix {
    let data = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(a, b)| {
            let d = b - a;
            if d > 0.0 {
                scale
            } else if d < 0.0 {
                -scale
            } else {
                0.0
            }
        })
        .collect();
    Matrix::from_vec(x.rows(), x.cols(), data).expect("same shape as x")
}

/// Value and gradients of a single-modality VAE loss.
#[derive(Clone, Debug)]
pub struct VaeLoss {
    pub loss: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub grads: VaeGrads,
}

/// `reconstruction_l1(x, decode(z)) + β · mean KL`, with `z` drawn through
/// the reparametrization path using noise from `rng`.
pub fn vae_loss(vae: &ModalityVae, x: &Matrix, beta: f64, rng: &mut SeededRng) -> Result<VaeLoss> {
    let eps = rng.gaussian_matrix(x.rows(), vae.latent_dim());
    vae_loss_with_noise(vae, x, beta, &eps)
}

/// [`vae_loss`] with caller-supplied noise.
pub fn vae_loss_with_noise(
    vae: &ModalityVae,
    x: &Matrix,
    beta: f64,
    eps: &Matrix,
) -> Result<VaeLoss> {
    if !(beta >= 0.0) {
        return Err(Error::contract(format!("beta must be non-negative, got {beta}")));
    }
    if x.cols() != vae.data_dim() {
        return Err(Error::dim("vae_loss", vae.data_dim(), x.cols()));
    }
    let n = x.rows().max(1) as f64;
    let latent = vae.latent_dim();
    let (enc_out, enc_cache) = vae.encoder.forward(x)?;
    let g = GaussianBatch::from_encoder_output(&enc_out, latent)?;
    let z = g.reparameterize(eps)?;
    let (x_hat, dec_cache) = vae.decoder.forward(&z)?;

    let reconstruction = l1_sum(x, &x_hat)? / n;
    let kl = mean_kl(&g);
    let loss = reconstruction + beta * kl;

    let (dec_grads, grad_z) = vae.decoder.backward(&dec_cache, &l1_grad(x, &x_hat, 1.0 / n))?;
    let grad_enc_out = gaussian_output_grad(&g, eps, &grad_z, beta / n);
    let enc_grads = vae.encoder.backward_params(&enc_cache, &grad_enc_out)?;

    Ok(VaeLoss {
        loss,
        reconstruction,
        kl,
        grads: VaeGrads {
            encoder: enc_grads,
            decoder: dec_grads,
        },
    })
}

/// Chains `∂L/∂z` through `z = μ + σ ⊙ eps` and adds `kl_scale · ∂KL/∂(μ, log_var)`,
/// producing the gradient with respect to the raw encoder output `[μ | log_var]`.
pub(crate) fn gaussian_output_grad(
    g: &GaussianBatch,
    eps: &Matrix,
    grad_z: &Matrix,
    kl_scale: f64,
) -> Matrix {
    let (rows, latent) = g.mu.shape();
    let mut out = Matrix::zeros(rows, 2 * latent);
    for r in 0..rows {
        let (mu, lv, e, gz) = (g.mu.row(r), g.log_var.row(r), eps.row(r), grad_z.row(r));
        let row = out.row_mut(r);
        for d in 0..latent {
            let sigma = (0.5 * lv[d]).exp();
            row[d] = gz[d] + kl_scale * mu[d];
            row[latent + d] = gz[d] * e[d] * 0.5 * sigma + kl_scale * 0.5 * (lv[d].exp() - 1.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Activation, AffineLayer};

    fn small_vae(data_dim: usize, hidden: usize, latent: usize, seed: u64) -> ModalityVae {
        let cfg = VaeConfig {
            latent_dim: latent,
            image_encoder_hidden: vec![hidden],
            image_decoder_hidden: vec![hidden],
            aux_encoder_hidden: vec![hidden],
            aux_decoder_hidden: vec![hidden],
        };
        let mut rng = SeededRng::new(seed);
        let mut vae = ModalityVae::new(ModalityId::ImageFeature, data_dim, &cfg, &mut rng).unwrap();
        for net in [&mut vae.encoder, &mut vae.decoder] {
            for layer in net.layers_mut() {
                for b in layer.bias.iter_mut() {
                    *b = 0.1 * rng.standard_normal();
                }
            }
        }
        vae
    }

    #[test]
    fn modality_codes_round_trip() {
        for m in ModalityId::ALL {
            assert_eq!(ModalityId::from_code(m.code()), Some(m));
            assert_eq!(m.name().parse::<ModalityId>().unwrap(), m);
        }
        assert_eq!(ModalityId::from_code(9), None);
    }

    #[test]
    fn zero_weight_encoder_returns_bias_halves() {
        let bias = vec![0.1, -0.2, 0.3, -0.4];
        let enc = Mlp::new(
            vec![AffineLayer::new(Matrix::zeros(4, 3), bias.clone()).unwrap()],
            Activation::Relu,
        )
        .unwrap();
        let dec = Mlp::new(
            vec![AffineLayer::new(Matrix::zeros(3, 2), vec![0.0; 3]).unwrap()],
            Activation::Relu,
        )
        .unwrap();
        let vae = ModalityVae::from_parts(ModalityId::Attribute, enc, dec).unwrap();
        let x = SeededRng::new(3).gaussian_matrix(5, 3);
        let g = vae.encode(&x).unwrap();
        assert_eq!(g.latent_dim(), 2);
        for r in 0..5 {
            assert_eq!(g.mu.row(r), &bias[..2]);
            assert_eq!(g.log_var.row(r), &bias[2..]);
        }
    }

    #[test]
    fn encode_matches_scalar_loop() {
        let vae = small_vae(4, 6, 3, 8);
        let x = SeededRng::new(1).gaussian_matrix(3, 4);
        let g = vae.encode(&x).unwrap();
        for r in 0..3 {
            // explicit per-element evaluation
            let mut h = x.row(r).to_vec();
            let layers = vae.encoder.layers();
            for (li, layer) in layers.iter().enumerate() {
                h = (0..layer.output_dim())
                    .map(|o| {
                        let s = layer.bias[o]
                            + (0..layer.input_dim())
                                .map(|i| layer.weight.get(o, i) * h[i])
                                .sum::<f64>();
                        if li + 1 < layers.len() {
                            s.max(0.0)
                        } else {
                            s
                        }
                    })
                    .collect();
            }
            for d in 0..3 {
                assert!((g.mu.get(r, d) - h[d]).abs() < 1e-12);
                assert!((g.log_var.get(r, d) - h[3 + d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encode_rejects_wrong_width() {
        let vae = small_vae(4, 6, 3, 8);
        assert!(matches!(
            vae.encode(&Matrix::zeros(1, 5)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn reparameterize_cases() {
        let g = DiagGaussian::new(vec![1.0, -2.0], vec![0.3, -1.0]).unwrap();
        assert_eq!(reparameterize(&g, &[0.0, 0.0]).unwrap(), g.mu);
        let unit = DiagGaussian::standard(3);
        assert_eq!(reparameterize(&unit, &[0.5, -1.0, 2.0]).unwrap(), vec![0.5, -1.0, 2.0]);
        assert!(reparameterize(&g, &[1.0]).is_err());
    }

    #[test]
    fn reparameterize_is_affine_in_noise() {
        let g = DiagGaussian::new(vec![0.4, -0.7, 1.1], vec![0.2, -0.5, 1.3]).unwrap();
        let eps = [0.3, -1.2, 0.8];
        let scaled: Vec<f64> = eps.iter().map(|e| 2.5 * e).collect();
        let z1 = reparameterize(&g, &eps).unwrap();
        let z2 = reparameterize(&g, &scaled).unwrap();
        for d in 0..3 {
            assert!(((z2[d] - g.mu[d]) - 2.5 * (z1[d] - g.mu[d])).abs() < 1e-12);
        }
    }

    #[test]
    fn reparameterized_moments() {
        let g = DiagGaussian::new(vec![0.5], vec![0.7]).unwrap();
        let mut rng = SeededRng::new(77);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| reparameterize(&g, &[rng.standard_normal()]).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01);
        assert!((var / 0.7f64.exp() - 1.0).abs() < 0.02);
    }

    #[test]
    fn kl_closed_form_cases() {
        assert_eq!(kl_to_standard_normal(&DiagGaussian::standard(4)), 0.0);
        let g = DiagGaussian::new(vec![1.0], vec![0.0]).unwrap();
        assert!((kl_to_standard_normal(&g) - 0.5).abs() < 1e-15);
        let g = DiagGaussian::new(vec![0.0], vec![2f64.ln()]).unwrap();
        assert!((kl_to_standard_normal(&g) - 0.153426).abs() < 1e-6);
    }

    #[test]
    fn l1_cases() {
        let x = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let x_hat = Matrix::from_rows(&[[1.0, -2.0]]).unwrap();
        assert_eq!(reconstruction_l1(&x, &x_hat).unwrap(), 3.0);
        assert_eq!(reconstruction_l1(&x, &x).unwrap(), 0.0);
        assert!(reconstruction_l1(&x, &Matrix::zeros(1, 3)).is_err());

        let a = SeededRng::new(4).gaussian_matrix(6, 5);
        let b = SeededRng::new(5).gaussian_matrix(6, 5);
        let mut expected = 0.0;
        for r in 0..6 {
            for c in 0..5 {
                expected += (a.get(r, c) - b.get(r, c)).abs();
            }
        }
        assert!((reconstruction_l1(&a, &b).unwrap() - expected / 6.0).abs() < 1e-12);
    }

    #[test]
    fn zero_beta_loss_is_pure_reconstruction() {
        let vae = small_vae(3, 5, 2, 1);
        let x = SeededRng::new(2).gaussian_matrix(4, 3);
        let out = vae_loss(&vae, &x, 0.0, &mut SeededRng::new(10)).unwrap();
        let eps = SeededRng::new(10).gaussian_matrix(4, 2);
        let z = vae.encode(&x).unwrap().reparameterize(&eps).unwrap();
        let expected = reconstruction_l1(&x, &vae.decode(&z).unwrap()).unwrap();
        assert_eq!(out.loss, expected);
    }

    #[test]
    fn kl_gradient_wrt_mean_is_mean() {
        // with zero noise and a huge beta, the encoder output gradient is
        // dominated by beta * mu / n on the mean half
        let g = GaussianBatch {
            mu: Matrix::from_rows(&[[0.7, -0.3]]).unwrap(),
            log_var: Matrix::from_rows(&[[0.4, -0.2]]).unwrap(),
        };
        let grad = gaussian_output_grad(&g, &Matrix::zeros(1, 2), &Matrix::zeros(1, 2), 1.0);
        assert_eq!(&grad.row(0)[..2], &[0.7, -0.3]);
        assert!((grad.get(0, 2) - 0.5 * (0.4f64.exp() - 1.0)).abs() < 1e-15);
        assert!(grad.get(0, 2) > 0.0 && grad.get(0, 3) < 0.0);
    }

    #[test]
    fn vae_loss_gradient_matches_finite_differences() {
        let mut vae = small_vae(4, 5, 3, 21);
        let x = SeededRng::new(22).gaussian_matrix(3, 4);
        let eps = SeededRng::new(23).gaussian_matrix(3, 3);
        let beta = 0.7;
        let analytic = vae_loss_with_noise(&vae, &x, beta, &eps).unwrap().grads;
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for which in 0..2 {
            let n_layers = if which == 0 { vae.encoder.layers().len() } else { vae.decoder.layers().len() };
            for li in 0..n_layers {
                let len = if which == 0 {
                    vae.encoder.layers()[li].weight.data().len()
                } else {
                    vae.decoder.layers()[li].weight.data().len()
                };
                for k in 0..len {
                    let eval = |delta: f64, vae: &mut ModalityVae| {
                        let net = if which == 0 { &mut vae.encoder } else { &mut vae.decoder };
                        net.layers_mut()[li].weight.data_mut()[k] += delta;
                        let l = vae_loss_with_noise(vae, &x, beta, &eps).unwrap().loss;
                        let net = if which == 0 { &mut vae.encoder } else { &mut vae.decoder };
                        net.layers_mut()[li].weight.data_mut()[k] -= delta;
                        l
                    };
                    let numeric = (eval(h, &mut vae) - eval(-h, &mut vae)) / (2.0 * h);
                    let a = if which == 0 {
                        analytic.encoder.layers[li].weight.data()[k]
                    } else {
                        analytic.decoder.layers[li].weight.data()[k]
                    };
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                    worst = worst.max(rel);
                }
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn single_point_training_reduces_loss() {
        use crate::numerics::AdamState;
        let mut vae = small_vae(6, 16, 2, 5);
        let x = Matrix::from_rows(&[[0.5, -1.0, 2.0, 0.3, -0.7, 1.2]]).unwrap();
        let mut adam = AdamState::new(1e-2);
        let mut rng = SeededRng::new(6);
        let mut losses = Vec::new();
        for _ in 0..200 {
            let out = vae_loss(&vae, &x, 0.01, &mut rng).unwrap();
            losses.push(out.loss);
            let ModalityVae { encoder, decoder, .. } = &mut vae;
            let mut refs = encoder.param_refs(&out.grads.encoder, "enc");
            refs.extend(decoder.param_refs(&out.grads.decoder, "dec"));
            adam.step(&mut refs).unwrap();
        }
        let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = losses[190..].iter().sum::<f64>() / 10.0;
        assert!(tail < 0.5 * head, "head {head} tail {tail}");
    }
}
