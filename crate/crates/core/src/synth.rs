//! Planted rank-one triclusters in Gaussian noise.
//!
//! Entry `(i, j, k)` is `γ · w_i · u_j · v_k + z_ijk`, where `w`, `u`, `v`
//! are unit indicator vectors of the planted index sets of modes 1, 2, 3 and
//! `z_ijk` is a standard normal drawn from a ChaCha8 stream keyed by the seed
//! and positioned at the entry's linear offset. Any single slice can
//! therefore be generated on its own, bit-for-bit equal to the same slice
//! of the full tensor.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MscError, Result};
use crate::tensor::{checked_len, offset, slice_shape, Mode, SliceMatrix, Tensor3};

/// Fraction of each mode planted in the cluster by default.
pub const DEFAULT_CLUSTER_FRAC: f64 = 0.1;

/// ChaCha words consumed per entry: two `u64` draws.
const WORDS_PER_ENTRY: u128 = 4;

/// `1/sqrt(|J|)` on `J`, zero elsewhere.
pub fn indicator_vector(m: usize, j: &[usize]) -> Result<Vec<f64>> {
    if j.is_empty() {
        return Err(MscError::Domain("indicator of an empty index set".into()));
    }
    if let Some(&bad) = j.iter().find(|&&i| i >= m) {
        return Err(MscError::Domain(format!("index {bad} outside [0, {m})")));
    }
    let h = 1.0 / (j.len() as f64).sqrt();
    let mut out = vec![0.0; m];
    for &i in j {
        out[i] = h;
    }
    Ok(out)
}

/// Planted index sets and signal parameters of a synthetic tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "J1")]
    pub j1: Vec<usize>,
    #[serde(rename = "J2")]
    pub j2: Vec<usize>,
    #[serde(rename = "J3")]
    pub j3: Vec<usize>,
    pub gamma: f64,
    pub l: usize,
    pub seed: u64,
    pub dims: [usize; 3],
}

impl GroundTruth {
    pub fn sets(&self) -> [&[usize]; 3] {
        [&self.j1, &self.j2, &self.j3]
    }
}

/// Normal deviates addressed by linear offset.
#[derive(Clone)]
struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn seek(&mut self, linear: usize) {
        self.rng.set_word_pos(linear as u128 * WORDS_PER_ENTRY);
    }

    /// Box–Muller, cosine branch only.
    fn next(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        let u1 = ((a >> 11) + 1) as f64 * SCALE;
        let u2 = (b >> 11) as f64 * SCALE;
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// A reproducible synthetic tensor, described rather than stored.
#[derive(Clone)]
pub struct Synthetic {
    dims: [usize; 3],
    gamma: f64,
    l: usize,
    seed: u64,
    factors: [Vec<f64>; 3],
}

impl std::fmt::Debug for Synthetic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Synthetic")
            .field("dims", &self.dims)
            .field("gamma", &self.gamma)
            .field("l", &self.l)
            .field("seed", &self.seed)
            .finish()
    }
}

impl Synthetic {
    /// Plants clusters `{0, …, l−1}` in every mode.
    pub fn new(dims: [usize; 3], l: usize, gamma: f64, seed: u64) -> Result<Self> {
        checked_len(dims)?;
        let min = *dims.iter().min().expect("three dims");
        if l == 0 || l > min {
            return Err(MscError::Domain(format!("cluster size {l} must lie in [1, {min}]")));
        }
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(MscError::Domain(format!("gamma must be finite and >= 0, got {gamma}")));
        }
        let planted: Vec<usize> = (0..l).collect();
        let factors = [
            indicator_vector(dims[0], &planted)?,
            indicator_vector(dims[1], &planted)?,
            indicator_vector(dims[2], &planted)?,
        ];
        Ok(Self {
            dims,
            gamma,
            l,
            seed,
            factors,
        })
    }

    /// Cluster size from a fraction of the shortest mode, at least 1.
    pub fn with_fraction(dims: [usize; 3], frac: f64, gamma: f64, seed: u64) -> Result<Self> {
        let min = *dims.iter().min().expect("three dims");
        let l = ((frac * min as f64).floor() as usize).max(1);
        Self::new(dims, l, gamma, seed)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let planted: Vec<usize> = (0..self.l).collect();
        GroundTruth {
            j1: planted.clone(),
            j2: planted.clone(),
            j3: planted,
            gamma: self.gamma,
            l: self.l,
            seed: self.seed,
            dims: self.dims,
        }
    }

    #[inline]
    pub fn signal(&self, i: usize, j: usize, k: usize) -> f64 {
        self.gamma * self.factors[0][i] * self.factors[1][j] * self.factors[2][k]
    }

    /// The noise-free part `γ w ⊗ u ⊗ v`.
    pub fn signal_tensor(&self) -> Result<Tensor3> {
        Tensor3::from_fn(self.dims, |i, j, k| self.signal(i, j, k))
    }

    pub fn tensor(&self) -> Result<Tensor3> {
        let mut noise = NoiseStream::new(self.seed);
        noise.seek(0);
        Tensor3::from_fn(self.dims, |i, j, k| self.signal(i, j, k) + noise.next())
    }

    /// Slice `index` of `mode`, generated without touching other slices.
    pub fn slice(&self, mode: Mode, index: usize) -> Result<SliceMatrix> {
        let dims = self.dims;
        let [m1, m2, m3] = dims;
        let size = dims[mode.axis()];
        if index >= size {
            return Err(MscError::Range {
                mode: mode.number(),
                index,
                size,
            });
        }
        let mut noise = NoiseStream::new(self.seed);
        let (rows, cols) = slice_shape(dims, mode);
        let mut data = Vec::with_capacity(rows * cols);
        match mode {
            Mode::One => {
                noise.seek(offset(dims, index, 0, 0));
                for j in 0..m2 {
                    for k in 0..m3 {
                        data.push(self.signal(index, j, k) + noise.next());
                    }
                }
            }
            Mode::Two => {
                for i in 0..m1 {
                    noise.seek(offset(dims, i, index, 0));
                    for k in 0..m3 {
                        data.push(self.signal(i, index, k) + noise.next());
                    }
                }
            }
            Mode::Three => {
                for i in 0..m1 {
                    for j in 0..m2 {
                        noise.seek(offset(dims, i, j, index));
                        data.push(self.signal(i, j, index) + noise.next());
                    }
                }
            }
        }
        SliceMatrix::new(rows, cols, data)
    }
}

/// Full tensor plus its ground truth.
pub fn generate(dims: [usize; 3], l: usize, gamma: f64, seed: u64) -> Result<(Tensor3, GroundTruth)> {
    let s = Synthetic::new(dims, l, gamma, seed)?;
    Ok((s.tensor()?, s.ground_truth()))
}
