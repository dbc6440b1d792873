//! Dense 3rd-order tensors, mode-wise slicing and block distribution.
//!
//! Entry `(i, j, k)` of a tensor with dims `(m1, m2, m3)` lives at linear
//! offset `(i * m2 + j) * m3 + k`, so mode-1 slices are contiguous and the
//! other two modes are strided copies.

mod io;

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{MscError, Result};

pub use io::{load_tensor, read_tensor, save_tensor, write_tensor, TensorFile, MAGIC};

/// One of the three tensor dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "usize", try_from = "usize")]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];

    /// 1-based mode number.
    pub fn number(self) -> usize {
        self.axis() + 1
    }

    /// 0-based axis.
    pub fn axis(self) -> usize {
        match self {
            Mode::One => 0,
            Mode::Two => 1,
            Mode::Three => 2,
        }
    }

    pub fn from_number(n: usize) -> Result<Self> {
        match n {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            other => Err(MscError::InvalidMode(other)),
        }
    }

    pub fn from_axis(axis: usize) -> Result<Self> {
        Self::from_number(axis + 1)
    }
}

impl From<Mode> for usize {
    fn from(m: Mode) -> usize {
        m.number()
    }
}

impl TryFrom<usize> for Mode {
    type Error = MscError;
    fn try_from(n: usize) -> Result<Self> {
        Mode::from_number(n)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Shape of a slice of `mode` taken from a tensor of `dims`: (rows, cols),
/// where rows follow the first remaining mode.
pub fn slice_shape(dims: [usize; 3], mode: Mode) -> (usize, usize) {
    match mode {
        Mode::One => (dims[1], dims[2]),
        Mode::Two => (dims[0], dims[2]),
        Mode::Three => (dims[0], dims[1]),
    }
}

/// Row-major dense real matrix. Used both for tensor slices and for the
/// covariance matrices built from them.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SliceMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(MscError::Shape(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(MscError::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(MscError::Shape("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| alpha * x).collect(),
        }
    }

    /// `y = A x`. Each row product runs four interleaved partial sums so
    /// it vectorizes; the summation order is fixed, so results are
    /// reproducible.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (yi, row) in y.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *yi = dot4(row, x);
        }
    }
}

/// Inner product accumulated in ascending index order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Dense 3rd-order tensor of finite reals. Immutable once built.
#[derive(Clone, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl fmt::Debug for Tensor3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor3").field("dims", &self.dims).finish_non_exhaustive()
    }
}

impl Tensor3 {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        let len = checked_len(dims)?;
        if data.len() != len {
            return Err(MscError::Shape(format!(
                "{} values for dims {:?} (expected {len})",
                data.len(),
                dims
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(MscError::Domain(format!("non-finite entry at offset {pos}")));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Result<Self> {
        let len = checked_len(dims)?;
        Ok(Self {
            dims,
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor entry by entry in layout order.
    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let len = checked_len(dims)?;
        let mut data = Vec::with_capacity(len);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn mode_len(&self, mode: Mode) -> usize {
        self.dims[mode.axis()]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        offset(self.dims, i, j, k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    /// Copies slice `index` of `mode` out of the tensor.
    pub fn slice(&self, mode: Mode, index: usize) -> Result<SliceMatrix> {
        let [m1, m2, m3] = self.dims;
        let size = self.mode_len(mode);
        if index >= size {
            return Err(MscError::Range {
                mode: mode.number(),
                index,
                size,
            });
        }
        let data = match mode {
            Mode::One => {
                let start = index * m2 * m3;
                self.data[start..start + m2 * m3].to_vec()
            }
            Mode::Two => {
                let mut out = Vec::with_capacity(m1 * m3);
                for i in 0..m1 {
                    let start = self.offset(i, index, 0);
                    out.extend_from_slice(&self.data[start..start + m3]);
                }
                out
            }
            Mode::Three => {
                let mut out = Vec::with_capacity(m1 * m2);
                for i in 0..m1 {
                    for j in 0..m2 {
                        out.push(self.data[self.offset(i, j, index)]);
                    }
                }
                out
            }
        };
        let (rows, cols) = slice_shape(self.dims, mode);
        Ok(SliceMatrix { rows, cols, data })
    }

    /// Reassembles a tensor from every slice of one mode, in index order.
    pub fn from_slices(dims: [usize; 3], mode: Mode, slices: &[SliceMatrix]) -> Result<Self> {
        let m = dims[mode.axis()];
        if slices.len() != m {
            return Err(MscError::Shape(format!("{} slices for mode length {m}", slices.len())));
        }
        let expected = slice_shape(dims, mode);
        if let Some(s) = slices.iter().find(|s| s.shape() != expected) {
            return Err(MscError::Shape(format!(
                "slice shape {:?}, expected {:?}",
                s.shape(),
                expected
            )));
        }
        Self::from_fn(dims, |i, j, k| match mode {
            Mode::One => slices[i].get(j, k),
            Mode::Two => slices[j].get(i, k),
            Mode::Three => slices[k].get(i, j),
        })
    }
}

#[inline]
pub(crate) fn offset(dims: [usize; 3], i: usize, j: usize, k: usize) -> usize {
    (i * dims[1] + j) * dims[2] + k
}

pub(crate) fn checked_len(dims: [usize; 3]) -> Result<usize> {
    if dims.contains(&0) {
        return Err(MscError::Shape(format!("dims must be positive, got {dims:?}")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n.checked_mul(8).is_some())
        .ok_or_else(|| MscError::Shape(format!("dims {dims:?} overflow")))
}

/// Contiguous run of slice indices owned by one process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRange {
    pub start: usize,
    pub count: usize,
}

impl BlockRange {
    pub fn end(&self) -> usize {
        self.start + self.count
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end()
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn contains(&self, index: usize) -> bool {
        self.range().contains(&index)
    }
}

/// Splits `0..m` into `parts` contiguous blocks. The first `m % parts`
/// ranks get one extra index.
pub fn block_range(m: usize, parts: usize, rank: usize) -> Result<BlockRange> {
    if parts == 0 {
        return Err(MscError::Domain("block_range with zero parts".into()));
    }
    if rank >= parts {
        return Err(MscError::Domain(format!("rank {rank} >= parts {parts}")));
    }
    let base = m / parts;
    let extra = m % parts;
    let count = base + usize::from(rank < extra);
    let start = rank * base + rank.min(extra);
    Ok(BlockRange { start, count })
}
