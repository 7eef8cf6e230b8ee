use crate::error::{Error, Result};
use crate::latent::LatentDataset;
use crate::numerics::{AdamState, Matrix, ParamRef, SeededRng};

/// Linear softmax classifier over an explicit label space.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxParams {
    /// Class indices in ascending order; row `r` of `weight` scores
    /// `classes[r]`.
    pub classes: Vec<usize>,
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl SoftmaxParams {
    /// Zero-initialized classifier; `classes` is sorted and deduplicated.
    pub fn zeros(classes: &[usize], dim: usize) -> Self {
        let mut classes = classes.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let n = classes.len();
        Self {
            classes,
            weight: Matrix::zeros(n, dim),
            bias: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim() {
            return Err(Error::dim("SoftmaxParams::logits", self.dim(), x.cols()));
        }
        let mut out = x.matmul_nt(&self.weight)?;
        out.add_row_vector(&self.bias)?;
        Ok(out)
    }

    pub fn probabilities(&self, x: &Matrix) -> Result<Matrix> {
        let mut p = self.logits(x)?;
        for r in 0..p.rows() {
            softmax_in_place(p.row_mut(r));
        }
        Ok(p)
    }

    /// Predicted class index per row. Ties go to the lowest class index.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok(logits.row_iter().map(|row| self.classes[argmax(row)]).collect())
    }

    /// Copy whose label space is restricted to `keep` (which must be a
    /// subset of the current classes).
    pub fn restricted(&self, keep: &[usize]) -> Result<Self> {
        let mut rows = Vec::new();
        let mut classes = Vec::new();
        for (r, c) in self.classes.iter().enumerate() {
            if keep.contains(c) {
                rows.push(r);
                classes.push(*c);
            }
        }
        if classes.len() != keep.len() {
            return Err(Error::contract("restricted label space must be a subset of the trained classes"));
        }
        Ok(Self {
            classes,
            weight: self.weight.select_rows(&rows),
            bias: rows.iter().map(|&r| self.bias[r]).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|b| b.is_finite())
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Classifier optimization settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftmaxHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Iterations when training on a dynamic stream.
    pub dynamic_iterations: usize,
    pub seed: u64,
}

impl Default for SoftmaxHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 50,
            dynamic_iterations: 3000,
            seed: 0,
        }
    }
}

impl SoftmaxHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::contract(format!("classifier learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("classifier batch_size must be positive"));
        }
        Ok(())
    }
}

/// Mean cross-entropy and its gradient for one batch.
pub fn cross_entropy(params: &SoftmaxParams, x: &Matrix, labels: &[usize]) -> Result<(f64, Matrix, Vec<f64>)> {
    let mut p = params.probabilities(x)?;
    let n = x.rows() as f64;
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let c = params
            .classes
            .binary_search(&label)
            .map_err(|_| Error::contract(format!("label {label} is outside the classifier label space")))?;
        let row = p.row_mut(r);
        loss -= row[c].max(f64::MIN_POSITIVE).ln();
        row[c] -= 1.0;
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    let grad_w = p.matmul_tn(x)?;
    let grad_b = p.column_sums();
    Ok((loss / n, grad_w, grad_b))
}

struct Optimizer {
    adam: AdamState,
}

impl Optimizer {
    fn step(&mut self, params: &mut SoftmaxParams, x: &Matrix, labels: &[usize]) -> Result<f64> {
        let (loss, gw, gb) = cross_entropy(params, x, labels)?;
        let mut refs = [
            ParamRef {
                name: "softmax.weight".into(),
                value: params.weight.data_mut(),
                grad: gw.data(),
            },
            ParamRef {
                name: "softmax.bias".into(),
                value: &mut params.bias,
                grad: &gb,
            },
        ];
        self.adam.step(&mut refs)?;
        Ok(loss)
    }
}

fn check_label_space(train: &LatentDataset, classes: &[usize]) -> Result<Vec<usize>> {
    let mut classes = classes.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::contract(format!(
            "a classifier needs at least two classes, got {}",
            classes.len()
        )));
    }
    let mut seen = vec![false; classes.len()];
    for &l in &train.labels {
        match classes.binary_search(&l) {
            Ok(c) => seen[c] = true,
            Err(_) => return Err(Error::contract(format!("training label {l} is outside the label space"))),
        }
    }
    let missing: Vec<String> = classes
        .iter()
        .zip(&seen)
        .filter(|(_, &s)| !s)
        .map(|(c, _)| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::contract(format!("no training samples for classes {}", missing.join(", "))));
    }
    Ok(classes)
}

/// Minimizes mean cross-entropy over a fixed latent set with Adam and
/// shuffled minibatches.
pub fn train_softmax(train: &LatentDataset, classes: &[usize], hyper: &SoftmaxHyper) -> Result<SoftmaxParams> {
    hyper.validate()?;
    let classes = check_label_space(train, classes)?;
    let mut params = SoftmaxParams::zeros(&classes, train.latent_dim());
    let mut opt = Optimizer {
        adam: AdamState::new(hyper.learning_rate),
    };
    let root = SeededRng::new(hyper.seed).fork(0xc1a5);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..hyper.epochs {
        order.sort_unstable();
        root.fork(epoch as u64).shuffle(&mut order);
        for chunk in order.chunks(hyper.batch_size) {
            let x = train.vectors.select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            opt.step(&mut params, &x, &labels)?;
        }
    }
    if !params.is_finite() {
        return Err(Error::Numeric("classifier parameters became non-finite".into()));
    }
    Ok(params)
}

/// Trains on `hyper.dynamic_iterations` batches drawn from `stream`.
pub fn train_softmax_dynamic<I>(stream: I, classes: &[usize], dim: usize, hyper: &SoftmaxHyper) -> Result<SoftmaxParams>
where
    I: Iterator<Item = Result<LatentDataset>>,
{
    hyper.validate()?;
    let mut classes = classes.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::contract("a classifier needs at least two classes"));
    }
    let mut params = SoftmaxParams::zeros(&classes, dim);
    let mut opt = Optimizer {
        adam: AdamState::new(hyper.learning_rate),
    };
    for batch in stream.take(hyper.dynamic_iterations) {
        let batch = batch?;
        opt.step(&mut params, &batch.vectors, &batch.labels)?;
    }
    if !params.is_finite() {
        return Err(Error::Numeric("classifier parameters became non-finite".into()));
    }
    Ok(params)
}
