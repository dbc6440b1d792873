//! Clustering quality metrics and the Wishart top-eigenvalue diagnostic.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_row_sum, SimilarityMatrix};
use crate::error::{MscError, Result};
use crate::spectral::{covariance, dense_top_eigenvalue};
use crate::tensor::SliceMatrix;

/// `|J ∩ Ĵ| / |J|` for one mode.
pub fn mode_recovery(truth: &[usize], found: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return Err(MscError::Domain("empty ground-truth set".into()));
    }
    let hits = truth.iter().filter(|t| found.contains(t)).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Mean over the three modes of the recovered fraction of each planted set.
pub fn recovery_rate(truth: [&[usize]; 3], found: [&[usize]; 3]) -> Result<f64> {
    let mut sum = 0.0;
    for (t, f) in truth.iter().zip(found) {
        sum += mode_recovery(t, f)?;
    }
    Ok(sum / 3.0)
}

/// `(1/|Ĵ|²) Σ_{i,j∈Ĵ} c_ij`, diagonal included.
pub fn mode_similarity(c: &SimilarityMatrix, found: &[usize]) -> Result<f64> {
    if found.is_empty() {
        return Err(MscError::Domain("empty cluster".into()));
    }
    if let Some(&bad) = found.iter().find(|&&i| i >= c.len()) {
        return Err(MscError::Domain(format!("cluster index {bad} outside [0, {})", c.len())));
    }
    let total = found
        .iter()
        .fold(0.0, |acc, &i| acc + cluster_row_sum(c.row(i), found));
    let l = found.len() as f64;
    Ok(total / (l * l))
}

pub fn similarity_index(sims: [&SimilarityMatrix; 3], found: [&[usize]; 3]) -> Result<f64> {
    let mut sum = 0.0;
    for (c, f) in sims.iter().zip(found) {
        sum += mode_similarity(c, f)?;
    }
    Ok(sum / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub rec: f64,
    pub sim: f64,
    pub rec_modes: [f64; 3],
    pub sim_modes: [f64; 3],
}

impl QualityReport {
    /// From per-mode recovery fractions and in-cluster similarities.
    pub fn from_modes(rec_modes: [f64; 3], sim_modes: [f64; 3]) -> Self {
        Self {
            rec: rec_modes.iter().sum::<f64>() / 3.0,
            sim: sim_modes.iter().sum::<f64>() / 3.0,
            rec_modes,
            sim_modes,
        }
    }

    pub fn evaluate(truth: [&[usize]; 3], found: [&[usize]; 3], sims: [&SimilarityMatrix; 3]) -> Result<Self> {
        let mut rec = [0.0; 3];
        let mut sim = [0.0; 3];
        for m in 0..3 {
            rec[m] = mode_recovery(truth[m], found[m])?;
            sim[m] = mode_similarity(sims[m], found[m])?;
        }
        Ok(Self::from_modes(rec, sim))
    }
}

/// Centering and scaling constants for the largest eigenvalue of a white
/// Wishart matrix built from `m2 × m3` Gaussian data.
pub fn tw_center_scale(m2: usize, m3: usize) -> Result<(f64, f64)> {
    if m2 < 2 || m3 < 1 {
        return Err(MscError::Domain(format!("need m2 >= 2 and m3 >= 1, got ({m2}, {m3})")));
    }
    let a = ((m2 - 1) as f64).sqrt();
    let b = (m3 as f64).sqrt();
    let mu = (a + b).powi(2);
    let sigma = mu.sqrt() * (1.0 / a + 1.0 / b).cbrt();
    Ok((mu, sigma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WishartSummary {
    pub m2: usize,
    pub m3: usize,
    pub mu: f64,
    pub sigma: f64,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation.
    pub spread: f64,
    pub standardized: Vec<f64>,
}

/// Samples `n_samples` Gaussian `m2 × m3` matrices and standardizes the top
/// eigenvalue of each `ZᵀZ` (computed by a dense eigensolve) with
/// [`tw_center_scale`].
pub fn wishart_diagnostic(m2: usize, m3: usize, n_samples: usize, seed: u64) -> Result<WishartSummary> {
    if m2 < 10 || m3 < 10 {
        return Err(MscError::Domain(format!("diagnostic needs m2, m3 >= 10, got ({m2}, {m3})")));
    }
    if n_samples == 0 {
        return Err(MscError::Domain("need at least one sample".into()));
    }
    let (mu, sigma) = tw_center_scale(m2, m3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let standardized: Vec<f64> = (0..n_samples)
        .map(|_| {
            let z: Vec<f64> = (0..m2 * m3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z = SliceMatrix::new(m2, m3, z).expect("non-empty sample");
            (dense_top_eigenvalue(&covariance(&z)) - mu) / sigma
        })
        .collect();
    let (mean, spread) = mean_std(&standardized);
    let mut sorted = standardized.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Ok(WishartSummary {
        m2,
        m3,
        mu,
        sigma,
        mean,
        median,
        spread,
        standardized,
    })
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
