//! Sequential multi-slice clustering.
//!
//! Per mode: dominant eigenpair of every slice covariance, columns
//! `λ_i v_i` scaled by the largest eigenvalue, absolute Gram matrix of those
//! columns, row sums, a max-gap cut of the sorted row sums, and a threshold
//! refinement that drops the weakest member until the spread of the row sums
//! inside the cluster fits the bound `l·ε/2 + sqrt(ln(m − l))`.

use serde::{Deserialize, Serialize};

use crate::error::{MscError, Result};
use crate::spectral::{covariance, top_eigenpair, SpectralSettings};
use crate::tensor::{dot, Mode, SliceMatrix, Tensor3};

/// Spread bound for a cluster of `l` members among `m` slices.
pub fn theorem_threshold(l: usize, eps: f64, m: usize) -> Result<f64> {
    if l == 0 || l >= m {
        return Err(MscError::Domain(format!("cluster size {l} must lie in [1, {m})")));
    }
    Ok(l as f64 * eps / 2.0 + ((m - l) as f64).ln().sqrt())
}

/// `sqrt(eps) ≤ 1 / (m − l)`. Only ever used to warn.
pub fn check_epsilon_hypothesis(eps: f64, m: usize, l: usize) -> bool {
    if l >= m {
        return true;
    }
    eps.sqrt() <= 1.0 / (m - l) as f64
}

/// Expected cluster size for a mode of length `m`: 10% of the slices.
pub fn default_cluster_size(m: usize) -> usize {
    m / 10
}

/// Largest ε satisfying the hypothesis at the default cluster size.
pub fn default_eps(m: usize) -> f64 {
    let gap = (m - default_cluster_size(m)).max(1) as f64;
    (1.0 / gap).powi(2)
}

/// Columns `λ_i v_i`, stored column-major, optionally divided by `λ_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenMatrix {
    rows: usize,
    columns: Vec<f64>,
    lambdas: Vec<f64>,
    lambda_max: f64,
    normalized: bool,
}

impl EigenMatrix {
    /// Assembles M from per-slice eigenvalues and scaled columns, in slice
    /// order. `lambda_max` is the running maximum over `lambdas`.
    pub fn from_columns(rows: usize, lambdas: Vec<f64>, columns: Vec<f64>) -> Result<Self> {
        if columns.len() != rows * lambdas.len() {
            return Err(MscError::Shape(format!(
                "{} column entries for {} columns of length {rows}",
                columns.len(),
                lambdas.len()
            )));
        }
        let lambda_max = lambdas.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            rows,
            columns,
            lambdas,
            lambda_max,
            normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Length of each column (the slice column count).
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i * self.rows..(i + 1) * self.rows]
    }

    pub fn column_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.columns[i * self.rows..(i + 1) * self.rows]
    }

    pub fn columns_flat(&self) -> &[f64] {
        &self.columns
    }

    /// Raw slice eigenvalues `λ_i`.
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// `λ̃_i = λ_i / λ_max`.
    pub fn scaled_lambdas(&self) -> Vec<f64> {
        self.lambdas.iter().map(|l| l / self.lambda_max).collect()
    }

    /// Overrides `lambda_max`, e.g. with a value all-reduced across processes.
    pub fn with_lambda_max(mut self, lambda_max: f64) -> Self {
        self.lambda_max = lambda_max;
        self
    }
}

/// Dominant eigenpair of one slice's covariance, returned as `(λ, λ·v)`.
pub fn eigen_column(slice: &SliceMatrix, settings: &SpectralSettings) -> Result<(f64, Vec<f64>)> {
    let pair = top_eigenpair(&covariance(slice), settings)?;
    let lambda = pair.value;
    let column = pair.vector.into_iter().map(|x| lambda * x).collect();
    Ok((lambda, column))
}

pub fn build_eigen_matrix(t: &Tensor3, mode: Mode, settings: &SpectralSettings) -> Result<EigenMatrix> {
    let m = t.mode_len(mode);
    let mut lambdas = Vec::with_capacity(m);
    let mut columns = Vec::new();
    let mut rows = 0;
    for i in 0..m {
        let slice = t.slice(mode, i)?;
        rows = slice.cols();
        let (lambda, col) =
            eigen_column(&slice, settings).map_err(|e| e.at_slice(mode.number(), i))?;
        lambdas.push(lambda);
        columns.extend(col);
    }
    EigenMatrix::from_columns(rows, lambdas, columns)
}

/// Divides every column by `λ_max`.
pub fn normalize(mut m: EigenMatrix) -> Result<EigenMatrix> {
    if m.normalized {
        return Ok(m);
    }
    let lmax = m.lambda_max;
    if lmax.is_nan() || lmax <= 0.0 {
        return Err(MscError::Degenerate(
            "largest slice eigenvalue is zero; nothing to normalize".into(),
        ));
    }
    m.columns.iter_mut().for_each(|x| *x /= lmax);
    m.normalized = true;
    Ok(m)
}

/// Symmetric matrix `c_ij = |⟨V_i, V_j⟩|`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    m: usize,
    entries: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_rows(m: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != m * m {
            return Err(MscError::Shape(format!("{} entries for a {m}x{m} matrix", entries.len())));
        }
        Ok(Self { m, entries })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// Rows `rows` of `|Vᵀ V|`, each dot product accumulated in ascending order.
pub fn similarity_rows(v: &EigenMatrix, rows: std::ops::Range<usize>) -> Vec<f64> {
    let m = v.len();
    let mut out = Vec::with_capacity(rows.len() * m);
    for i in rows {
        let ci = v.column(i);
        out.extend((0..m).map(|j| dot(ci, v.column(j)).abs()));
    }
    out
}

pub fn similarity(v: &EigenMatrix) -> SimilarityMatrix {
    let m = v.len();
    SimilarityMatrix {
        m,
        entries: similarity_rows(v, 0..m),
    }
}

/// Row sums `d_i = Σ_j c_ij`, diagonal included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarginalVector(pub Vec<f64>);

impl MarginalVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn row_sum(row: &[f64]) -> f64 {
    row.iter().fold(0.0, |acc, x| acc + x)
}

/// `Σ_{j∈J} row[j]`, in ascending `j`.
pub fn cluster_row_sum(row: &[f64], members: &[usize]) -> f64 {
    members.iter().fold(0.0, |acc, &j| acc + row[j])
}

pub fn marginals(c: &SimilarityMatrix) -> MarginalVector {
    MarginalVector((0..c.len()).map(|i| row_sum(c.row(i))).collect())
}

/// Sorted, non-empty set of slice indices of one mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub mode: Mode,
    pub indices: Vec<usize>,
}

impl ClusterSet {
    pub fn new(mode: Mode, mut indices: Vec<usize>, m: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(MscError::Domain(format!("empty cluster for mode {mode}")));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(MscError::Range {
                mode: mode.number(),
                index: bad,
                size: m,
            });
        }
        Ok(Self { mode, indices })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

/// Output of the max-gap cut.
#[derive(Debug, Clone, PartialEq)]
pub struct GapInit {
    pub cluster: ClusterSet,
    /// `false` when every `d_i` is equal and the whole mode was returned.
    pub gap_found: bool,
}

/// Indices whose `d` lies above the largest gap of the descending sort.
/// Equal gaps resolve to the earliest one.
pub fn max_gap_init(d: &MarginalVector, mode: Mode) -> Result<GapInit> {
    let m = d.len();
    if m == 0 {
        return Err(MscError::Domain("empty marginal vector".into()));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| d.0[b].total_cmp(&d.0[a]).then(a.cmp(&b)));

    let mut best_gap = 0.0;
    let mut cut = None;
    for k in 0..m.saturating_sub(1) {
        let gap = d.0[order[k]] - d.0[order[k + 1]];
        if gap > best_gap {
            best_gap = gap;
            cut = Some(k);
        }
    }
    let (take, gap_found) = match cut {
        Some(k) => (k + 1, true),
        None => {
            if m > 1 {
                log::warn!("mode {mode}: all marginal sums are equal, no gap to cut at");
            }
            (m, m == 1)
        }
    };
    Ok(GapInit {
        cluster: ClusterSet::new(mode, order[..take].to_vec(), m)?,
        gap_found,
    })
}

/// Drops the member with the smallest `d` (largest index on ties) while the
/// spread of `d` over the cluster exceeds the threshold. Returns the final
/// cluster and the number of removals.
pub fn refine(d: &MarginalVector, j0: &ClusterSet, eps: f64) -> Result<(ClusterSet, usize)> {
    let m = d.len();
    let mut members = j0.indices.clone();
    if let Some(&bad) = members.iter().find(|&&i| i >= m) {
        return Err(MscError::Range {
            mode: j0.mode.number(),
            index: bad,
            size: m,
        });
    }
    let mut removals = 0;
    while members.len() > 1 {
        let l = members.len();
        let hi = members.iter().map(|&i| d.0[i]).fold(f64::NEG_INFINITY, f64::max);
        let lo = members.iter().map(|&i| d.0[i]).fold(f64::INFINITY, f64::min);
        let spread = hi - lo;
        if spread <= 0.0 || l >= m {
            break;
        }
        if spread <= theorem_threshold(l, eps, m)? {
            break;
        }
        let (pos, _) = members
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| d.0[a].total_cmp(&d.0[b]).then(b.cmp(&a)))
            .expect("non-empty cluster");
        members.remove(pos);
        removals += 1;
    }
    Ok((ClusterSet::new(j0.mode, members, m)?, removals))
}

/// Outcome of cluster selection on a full marginal vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub cluster: ClusterSet,
    pub iterations: usize,
    pub gap_found: bool,
}

/// Max-gap cut followed by refinement.
pub fn select_cluster(d: &MarginalVector, mode: Mode, eps: f64) -> Result<Selection> {
    let init = max_gap_init(d, mode)?;
    let (cluster, iterations) = refine(d, &init.cluster, eps)?;
    Ok(Selection {
        cluster,
        iterations,
        gap_found: init.gap_found,
    })
}

/// Run configuration shared by the sequential and parallel pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MscConfig {
    /// `None` picks [`default_eps`] per mode.
    pub eps: Option<f64>,
    pub spectral: SpectralSettings,
}

impl MscConfig {
    pub fn with_eps(eps: f64) -> Self {
        Self {
            eps: Some(eps),
            ..Self::default()
        }
    }

    pub fn eps_for(&self, m: usize) -> f64 {
        self.eps.unwrap_or_else(|| default_eps(m))
    }
}

/// Serialized per-mode result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: Mode,
    #[serde(rename = "J")]
    pub j: Vec<usize>,
    pub d: Vec<f64>,
    pub iterations: usize,
    pub eps: f64,
    pub hypothesis_ok: bool,
}

impl ModeReport {
    pub fn new(selection: &Selection, d: &MarginalVector, eps: f64) -> Self {
        let m = d.len();
        let hypothesis_ok = check_epsilon_hypothesis(eps, m, selection.cluster.len());
        if !hypothesis_ok {
            log::warn!(
                "mode {}: eps {eps:e} violates sqrt(eps) <= 1/(m - l) for m = {m}, l = {}",
                selection.cluster.mode,
                selection.cluster.len()
            );
        }
        Self {
            mode: selection.cluster.mode,
            j: selection.cluster.indices.clone(),
            d: d.0.clone(),
            iterations: selection.iterations,
            eps,
            hypothesis_ok,
        }
    }

    pub fn cluster(&self) -> Result<ClusterSet> {
        ClusterSet::new(self.mode, self.j.clone(), self.d.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeResult {
    pub cluster: ClusterSet,
    pub d: MarginalVector,
    pub sim: SimilarityMatrix,
    pub iterations: usize,
    pub eps: f64,
    pub gap_found: bool,
}

impl ModeResult {
    pub fn report(&self) -> ModeReport {
        let sel = Selection {
            cluster: self.cluster.clone(),
            iterations: self.iterations,
            gap_found: self.gap_found,
        };
        ModeReport::new(&sel, &self.d, self.eps)
    }
}

pub fn msc_mode(t: &Tensor3, mode: Mode, config: &MscConfig) -> Result<ModeResult> {
    let eps = config.eps_for(t.mode_len(mode));
    let v = normalize(build_eigen_matrix(t, mode, &config.spectral)?)?;
    let sim = similarity(&v);
    let d = marginals(&sim);
    let sel = select_cluster(&d, mode, eps)?;
    Ok(ModeResult {
        cluster: sel.cluster,
        d,
        sim,
        iterations: sel.iterations,
        eps,
        gap_found: sel.gap_found,
    })
}

/// All three modes, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct MscResult {
    pub modes: [ModeResult; 3],
}

impl MscResult {
    pub fn clusters(&self) -> [&ClusterSet; 3] {
        [&self.modes[0].cluster, &self.modes[1].cluster, &self.modes[2].cluster]
    }

    pub fn reports(&self) -> [ModeReport; 3] {
        [self.modes[0].report(), self.modes[1].report(), self.modes[2].report()]
    }
}

/// Result JSON: one [`ModeReport`] per mode, plus the timing file of a
/// parallel run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MscReport {
    #[serde(rename = "J1")]
    pub j1: ModeReport,
    #[serde(rename = "J2")]
    pub j2: ModeReport,
    #[serde(rename = "J3")]
    pub j3: ModeReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_file: Option<String>,
}

impl MscReport {
    pub fn modes(&self) -> [&ModeReport; 3] {
        [&self.j1, &self.j2, &self.j3]
    }
}

impl MscResult {
    pub fn to_report(&self) -> MscReport {
        let [j1, j2, j3] = self.reports();
        MscReport {
            j1,
            j2,
            j3,
            timings_file: None,
        }
    }
}

pub fn msc(t: &Tensor3, config: &MscConfig) -> Result<MscResult> {
    Ok(MscResult {
        modes: [
            msc_mode(t, Mode::One, config)?,
            msc_mode(t, Mode::Two, config)?,
            msc_mode(t, Mode::Three, config)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mv(d: &[f64]) -> MarginalVector {
        MarginalVector(d.to_vec())
    }

    #[test]
    fn threshold_examples() {
        let t = theorem_threshold(3, 1e-5, 10).unwrap();
        assert!((t - (1.5e-5 + 7f64.ln().sqrt())).abs() < 1e-15);
        assert!((t - 1.394_973_834).abs() < 1e-9);
        assert_eq!(theorem_threshold(5, 0.3, 6).unwrap(), 5.0 * 0.3 / 2.0);
        let t = theorem_threshold(100, 1.2e-6, 1000).unwrap();
        assert!((t - 2.608_200_097).abs() < 1e-9);
        assert!(theorem_threshold(10, 1e-3, 10).is_err());
        assert!(theorem_threshold(0, 1e-3, 10).is_err());
    }

    #[test]
    fn hypothesis_examples() {
        assert!(check_epsilon_hypothesis(1.2e-6, 1000, 100));
        assert!(!check_epsilon_hypothesis(1e-5, 1000, 100));
        assert!(check_epsilon_hypothesis(0.0, 7, 3));
    }

    #[test]
    fn default_eps_reproduces_reported_choice() {
        // m = 1000, l = 100: (1/900)^2 ≈ 1.23e-6
        assert!((default_eps(1000) - 1.0 / 810_000.0).abs() < 1e-18);
        assert!(check_epsilon_hypothesis(default_eps(1000), 1000, 100));
    }

    #[test]
    fn normalize_examples() {
        let m = EigenMatrix::from_columns(2, vec![2.0], vec![2.0, 0.0]).unwrap();
        let v = normalize(m).unwrap();
        assert_eq!(v.column(0), &[1.0, 0.0]);

        let m = EigenMatrix::from_columns(1, vec![4.0, 2.0], vec![4.0, 2.0]).unwrap();
        let v = normalize(m).unwrap();
        assert_eq!(v.scaled_lambdas(), vec![1.0, 0.5]);
        assert_eq!(v.column(1), &[0.5]);

        let z = EigenMatrix::from_columns(1, vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(normalize(z), Err(MscError::Degenerate(_))));
    }

    #[test]
    fn similarity_examples() {
        let same = EigenMatrix::from_columns(2, vec![1.0, 1.0], vec![0.6, 0.8, 0.6, 0.8]).unwrap();
        let c = similarity(&normalize(same).unwrap());
        for x in c.entries() {
            assert!((x - 1.0).abs() < 1e-15);
        }
        let ortho = EigenMatrix::from_columns(2, vec![1.0, 1.0], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(similarity(&normalize(ortho).unwrap()).entries(), &[1.0, 0.0, 0.0, 1.0]);

        let a = EigenMatrix::from_columns(2, vec![1.0, 0.5], vec![0.6, 0.8, 0.3, -0.4]).unwrap();
        let mut b = a.clone();
        b.column_mut(1).iter_mut().for_each(|x| *x = -*x);
        assert_eq!(similarity(&a), similarity(&b));
    }

    #[test]
    fn marginal_examples() {
        let id = SimilarityMatrix::from_rows(3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        assert_eq!(marginals(&id).0, vec![1.0; 3]);
        let ones = SimilarityMatrix::from_rows(4, vec![1.0; 16]).unwrap();
        assert_eq!(marginals(&ones).0, vec![4.0; 4]);
        let c = SimilarityMatrix::from_rows(2, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        assert_eq!(marginals(&c).0, vec![1.5, 1.5]);
    }

    /// Brute force: try every cut position of the descending order and keep
    /// the one with the largest gap.
    fn brute_gap(d: &[f64]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..d.len()).collect();
        idx.sort_by(|&a, &b| d[b].partial_cmp(&d[a]).unwrap().then(a.cmp(&b)));
        let gaps: Vec<f64> = idx.windows(2).map(|w| d[w[0]] - d[w[1]]).collect();
        let best = gaps.iter().cloned().fold(f64::MIN, f64::max);
        let k = gaps.iter().position(|&g| g == best).unwrap();
        let mut out = idx[..=k].to_vec();
        out.sort();
        out
    }

    #[test]
    fn max_gap_examples() {
        let d = [4.0, 3.9, 3.8, 1.0, 0.9];
        let g = max_gap_init(&mv(&d), Mode::One).unwrap();
        assert_eq!(g.cluster.indices, vec![0, 1, 2]);
        assert_eq!(g.cluster.indices, brute_gap(&d));
        assert!(g.gap_found);

        assert_eq!(max_gap_init(&mv(&[9.0, 1.0]), Mode::One).unwrap().cluster.indices, vec![0]);

        let g = max_gap_init(&mv(&[2.0, 2.0, 2.0]), Mode::Two).unwrap();
        assert_eq!(g.cluster.indices, vec![0, 1, 2]);
        assert!(!g.gap_found);
    }

    #[test]
    fn max_gap_ties_pick_earliest_gap() {
        // gaps 1, 1: cut after the first
        let g = max_gap_init(&mv(&[1.0, 3.0, 2.0]), Mode::One).unwrap();
        assert_eq!(g.cluster.indices, vec![1]);
    }

    #[test]
    fn refine_hand_executed() {
        let mut d = vec![0.5; 10];
        d[0] = 4.0;
        d[1] = 3.9;
        d[2] = 2.0;
        let j0 = ClusterSet::new(Mode::One, vec![0, 1, 2], 10).unwrap();
        let (j, it) = refine(&mv(&d), &j0, 1e-5).unwrap();
        assert_eq!(j.indices, vec![0, 1]);
        assert_eq!(it, 1);
        let t2 = theorem_threshold(2, 1e-5, 10).unwrap();
        assert!((t2 - 1.442_036_887).abs() < 1e-9);
    }

    #[test]
    fn refine_no_change_and_singleton_floor() {
        let d = mv(&[4.0, 3.9, 0.1, 0.0]);
        let j0 = ClusterSet::new(Mode::One, vec![0, 1], 4).unwrap();
        assert_eq!(refine(&d, &j0, 1e-3).unwrap(), (j0.clone(), 0));

        // threshold with m - l = 1 is l*eps/2; a large spread drains to one member
        let d = mv(&[100.0, 50.0, 0.0]);
        let j0 = ClusterSet::new(Mode::One, vec![0, 1], 3).unwrap();
        let (j, it) = refine(&d, &j0, 1e-6).unwrap();
        assert_eq!(j.indices, vec![0]);
        assert_eq!(it, 1);
    }

    #[test]
    fn refine_removal_ties_drop_largest_index() {
        let d = mv(&[10.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let j0 = ClusterSet::new(Mode::One, vec![0, 1, 2], 6).unwrap();
        let (j, _) = refine(&d, &j0, 1e-9).unwrap();
        // spread 9 > threshold: index 2 goes first, then index 1
        assert_eq!(j.indices, vec![0]);
        let d = mv(&[3.0, 1.7, 1.7, 0.0, 0.0, 0.0, 0.0]);
        let j0 = ClusterSet::new(Mode::One, vec![0, 1, 2], 7).unwrap();
        let (j, it) = refine(&d, &j0, 1e-9).unwrap();
        // l=3: 1.3 > sqrt(ln 4) = 1.177 → drop 2; l=2: 1.3 <= sqrt(ln 5) = 1.269? no, 1.3 > 1.269 → drop 1
        assert_eq!((j.indices, it), (vec![0], 2));
    }

    #[test]
    fn cluster_set_invariants() {
        let c = ClusterSet::new(Mode::One, vec![3, 1, 3], 4).unwrap();
        assert_eq!(c.indices, vec![1, 3]);
        assert!(ClusterSet::new(Mode::One, vec![], 4).is_err());
        assert!(ClusterSet::new(Mode::One, vec![4], 4).is_err());
    }

    #[test]
    fn zero_tensor_is_degenerate() {
        let t = Tensor3::zeros([4, 4, 4]).unwrap();
        let err = msc_mode(&t, Mode::One, &MscConfig::default()).unwrap_err();
        assert!(matches!(err, MscError::Degenerate(_)));
        let m = build_eigen_matrix(&t, Mode::Two, &SpectralSettings::default()).unwrap();
        assert_eq!(m.lambda_max(), 0.0);
        assert!(m.columns_flat().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn report_json_shape() {
        let sel = Selection {
            cluster: ClusterSet::new(Mode::Two, vec![0, 2], 4).unwrap(),
            iterations: 1,
            gap_found: true,
        };
        let r = ModeReport::new(&sel, &mv(&[3.0, 0.5, 2.9, 0.4]), 0.01);
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["mode"], 2);
        assert_eq!(v["J"], serde_json::json!([0, 2]));
        assert_eq!(v["iterations"], 1);
        assert_eq!(v["hypothesis_ok"], true);
        let back: ModeReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}
