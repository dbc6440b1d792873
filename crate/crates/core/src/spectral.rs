//! Slice covariances and their dominant eigenpair by power iteration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MscError, Result};
use crate::tensor::{dot, norm2, SliceMatrix};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;
pub const DEFAULT_SEED: u64 = 0x5eed;

/// Top eigenvalue and unit eigenvector of a symmetric PSD matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
}

/// Power iteration controls. Every slice of a run uses the same settings,
/// which is what makes parallel and sequential runs bitwise identical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SpectralSettings {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            seed: DEFAULT_SEED,
        }
    }
}

/// `sᵀ s`. Only the upper triangle is accumulated; the lower one is mirrored
/// so the result is exactly symmetric.
pub fn covariance(s: &SliceMatrix) -> SliceMatrix {
    let n = s.cols();
    let mut c = vec![0.0; n * n];
    for r in 0..s.rows() {
        let row = s.row(r);
        for a in 0..n {
            let ra = row[a];
            if ra == 0.0 {
                continue;
            }
            let dst = &mut c[a * n + a..a * n + n];
            for (d, &rb) in dst.iter_mut().zip(&row[a..]) {
                *d += ra * rb;
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            c[a * n + b] = c[b * n + a];
        }
    }
    SliceMatrix::new(n, n, c).expect("covariance of a non-empty slice")
}

/// Deterministic pseudo-random unit start vector.
fn start_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let nrm = norm2(&v);
        if nrm > 0.0 {
            return v.into_iter().map(|x| x / nrm).collect();
        }
    }
}

/// Flips `v` so its largest-magnitude entry (lowest index on ties) is positive.
pub fn canonical_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Residual `‖c v − λ v‖₂`.
pub fn residual(c: &SliceMatrix, pair: &EigenPair) -> f64 {
    let mut w = vec![0.0; c.rows()];
    c.mul_vec(&pair.vector, &mut w);
    w.iter()
        .zip(&pair.vector)
        .map(|(wi, vi)| (wi - pair.value * vi).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Dominant eigenpair of a symmetric positive semi-definite matrix.
///
/// Stops as soon as `‖c v − λ v‖ ≤ tol · max(λ, 1)` with `λ` the Rayleigh
/// quotient of the current unit iterate. Rayleigh quotients that dip below
/// zero through rounding are clamped to 0.
pub fn top_eigenpair(c: &SliceMatrix, settings: &SpectralSettings) -> Result<EigenPair> {
    if !c.is_square() {
        return Err(MscError::Shape(format!("covariance must be square, got {:?}", c.shape())));
    }
    if settings.tol.is_nan() || settings.tol <= 0.0 {
        return Err(MscError::Domain(format!("tolerance must be positive, got {}", settings.tol)));
    }
    let n = c.rows();
    if c.as_slice().iter().all(|&x| x == 0.0) {
        let mut vector = vec![0.0; n];
        vector[0] = 1.0;
        return Ok(EigenPair { value: 0.0, vector });
    }

    let mut v = start_vector(n, settings.seed);
    let mut w = vec![0.0; n];
    let mut restarted = false;
    let mut last_residual = f64::INFINITY;
    let mut last_value = 0.0;
    for _ in 0..settings.max_iter {
        c.mul_vec(&v, &mut w);
        let wn = norm2(&w);
        if wn == 0.0 && !restarted {
            // start vector fell in the null space; restart on the column
            // with the largest diagonal entry, which is never null for a PSD c
            restarted = true;
            let k = (0..n)
                .max_by(|&a, &b| c.get(a, a).total_cmp(&c.get(b, b)).then(b.cmp(&a)))
                .unwrap_or(0);
            v.iter_mut().for_each(|x| *x = 0.0);
            v[k] = 1.0;
            continue;
        }
        let lambda = dot(&v, &w);
        let res = w
            .iter()
            .zip(&v)
            .map(|(wi, vi)| (wi - lambda * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        last_residual = res;
        last_value = lambda;
        if res <= settings.tol * lambda.max(1.0) {
            canonical_sign(&mut v);
            return Ok(EigenPair {
                value: lambda.max(0.0),
                vector: v,
            });
        }
        if wn == 0.0 {
            break;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / wn;
        }
    }
    canonical_sign(&mut v);
    Err(MscError::Convergence {
        iterations: settings.max_iter,
        residual: last_residual,
        last: EigenPair {
            value: last_value.max(0.0),
            vector: v,
        },
    })
}

/// Top eigenvalue by a full dense symmetric eigensolve. Independent of the
/// power-iteration path; used by the Wishart diagnostic and as an oracle.
pub fn dense_top_eigenvalue(c: &SliceMatrix) -> f64 {
    let n = c.rows();
    let m = nalgebra::DMatrix::from_row_slice(n, n, c.as_slice());
    m.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
