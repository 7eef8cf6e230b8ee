use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Matrix;

/// Seeded, counter-based random stream owned by its caller.
///
/// Backed by ChaCha8: the seed selects the key, and [`SeededRng::fork`] picks
/// an independent stream under the same key. The position inside the stream
/// is observable through [`SeededRng::position`].
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent substream labelled by `label`. Forking does not advance
    /// `self`, and the result depends only on (seed, stream, label).
    pub fn fork(&self, label: u64) -> SeededRng {
        Self::with_stream(self.seed, mix(self.stream, label))
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Matrix of i.i.d. standard normal entries, filled row by row.
    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| self.standard_normal()).collect();
        Matrix::from_vec(rows, cols, data).expect("length matches shape")
    }
}

/// `rows × cols` standard normal draws from `rng`.
pub fn gaussian_sample(rng: &mut SeededRng, rows: usize, cols: usize) -> Matrix {
    rng.gaussian_matrix(rows, cols)
}

// splitmix64 finalizer over the pair
fn mix(stream: u64, label: u64) -> u64 {
    let mut z = stream
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(label)
        .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
