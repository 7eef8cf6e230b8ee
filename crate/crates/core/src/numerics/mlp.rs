use std::sync::atomic::{AtomicU64, Ordering};

use super::{Matrix, SeededRng};
use crate::error::{Error, Result};

/// Dense layer `y = x · Wᵀ + b` with `W` stored as `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl AffineLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::dim("AffineLayer::new", weight.rows(), bias.len()));
        }
        Ok(Self { weight, bias })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(input: usize, output: usize, rng: &mut SeededRng) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| (2.0 * rng.uniform() - 1.0) * bound)
            .collect();
        Self {
            weight: Matrix::from_vec(output, input, data).expect("shape"),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    /// `max(0, x)`, derivative taken as 0 at the kink.
    #[default]
    Relu,
}

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    NEXT_GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Feed-forward network: hidden layers are activated, the last layer is
/// linear.
#[derive(Debug)]
pub struct Mlp {
    layers: Vec<AffineLayer>,
    activation: Activation,
    // changes whenever parameters may have been mutated; caches remember it
    generation: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            activation: self.activation,
            generation: next_generation(),
        }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.activation == other.activation
    }
}

/// Layer inputs recorded by [`Mlp::forward`], consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct MlpCache {
    generation: u64,
    inputs: Vec<Matrix>,
}

impl MlpCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }
}

/// Gradients for every layer of an [`Mlp`], in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<AffineLayer>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| AffineLayer {
                    weight: Matrix::zeros(l.output_dim(), l.input_dim()),
                    bias: vec![0.0; l.output_dim()],
                })
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &MlpGrads) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::dim(
                "MlpGrads::accumulate",
                self.layers.len(),
                other.layers.len(),
            ));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_scaled(&b.weight, 1.0)?;
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }
}

/// One named parameter tensor together with its gradient, as handed to the
/// optimizer.
pub struct ParamRef<'a> {
    pub name: String,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

impl Mlp {
    pub fn new(layers: Vec<AffineLayer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("an MLP needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::dim(
                    "Mlp::new",
                    pair[0].output_dim(),
                    pair[1].input_dim(),
                ));
            }
        }
        Ok(Self {
            layers,
            activation,
            generation: next_generation(),
        })
    }

    /// Randomly initialised network with the given layer widths, e.g.
    /// `[in, hidden, out]`.
    pub fn glorot(widths: &[usize], rng: &mut SeededRng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::contract(format!(
                "invalid layer widths {widths:?}"
            )));
        }
        let layers = widths
            .windows(2)
            .map(|w| AffineLayer::glorot(w[0], w[1], rng))
            .collect();
        Self::new(layers, Activation::Relu)
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    /// Mutable access to the layers. Invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [AffineLayer] {
        self.generation = next_generation();
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    /// Forward pass without keeping activations.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.run(x, None)
    }

    /// Forward pass that records what [`Mlp::backward`] needs.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let out = self.run(x, Some(&mut inputs))?;
        Ok((
            out,
            MlpCache {
                generation: self.generation,
                inputs,
            },
        ))
    }

    fn run(&self, x: &Matrix, mut record: Option<&mut Vec<Matrix>>) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim("Mlp::forward", self.input_dim(), x.cols()));
        }
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut next = h.matmul_nt(&layer.weight)?;
            next.add_row_vector(&layer.bias)?;
            if i != last {
                match self.activation {
                    Activation::Relu => next.data_mut().iter_mut().for_each(|v| {
                        if *v <= 0.0 {
                            *v = 0.0
                        }
                    }),
                }
            }
            if let Some(rec) = record.as_deref_mut() {
                rec.push(h);
            }
            h = next;
        }
        Ok(h)
    }

    /// Gradients of a scalar loss with respect to every parameter and to the
    /// input, given `grad_out = ∂loss/∂output`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Matrix) -> Result<(MlpGrads, Matrix)> {
        let (grads, grad_in) = self.backprop(cache, grad_out, true)?;
        Ok((grads, grad_in.expect("input gradient requested")))
    }

    /// Like [`Mlp::backward`] but skips the input gradient.
    pub fn backward_params(&self, cache: &MlpCache, grad_out: &Matrix) -> Result<MlpGrads> {
        Ok(self.backprop(cache, grad_out, false)?.0)
    }

    fn backprop(
        &self,
        cache: &MlpCache,
        grad_out: &Matrix,
        want_input_grad: bool,
    ) -> Result<(MlpGrads, Option<Matrix>)> {
        if cache.generation != self.generation {
            return Err(Error::State(
                "activation cache was produced by different parameters".into(),
            ));
        }
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::State("activation cache is incomplete".into()));
        }
        if grad_out.cols() != self.output_dim() || grad_out.rows() != cache.batch_size() {
            return Err(Error::dim(
                "Mlp::backward",
                format!("{}x{}", cache.batch_size(), self.output_dim()),
                format!("{}x{}", grad_out.rows(), grad_out.cols()),
            ));
        }

        let mut layer_grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            let weight = delta.matmul_tn(input)?;
            let bias = delta.column_sums();
            layer_grads.push(AffineLayer { weight, bias });
            if i == 0 && !want_input_grad {
                break;
            }
            let mut grad_in = delta.matmul(&layer.weight)?;
            if i > 0 {
                // input of layer i is the activated output of layer i-1
                match self.activation {
                    Activation::Relu => {
                        for (g, a) in grad_in.data_mut().iter_mut().zip(input.data()) {
                            if *a <= 0.0 {
                                *g = 0.0;
                            }
                        }
                    }
                }
            }
            delta = grad_in;
        }
        layer_grads.reverse();
        let grad_in = want_input_grad.then_some(delta);
        Ok((MlpGrads { layers: layer_grads }, grad_in))
    }

    /// Pairs each parameter tensor with its gradient for an optimizer step.
    /// Invalidates outstanding caches.
    pub fn param_refs<'a>(&'a mut self, grads: &'a MlpGrads, prefix: &str) -> Vec<ParamRef<'a>> {
        self.generation = next_generation();
        let mut refs = Vec::with_capacity(2 * self.layers.len());
        for (i, (layer, grad)) in self.layers.iter_mut().zip(&grads.layers).enumerate() {
            refs.push(ParamRef {
                name: format!("{prefix}.layer{i}.weight"),
                value: layer.weight.data_mut(),
                grad: grad.weight.data(),
            });
            refs.push(ParamRef {
                name: format!("{prefix}.layer{i}.bias"),
                value: &mut layer.bias,
                grad: &grad.bias,
            });
        }
        refs
    }
}
