//! Orthonormal Fourier basis on [0, 1] and the coefficient-space carrier for
//! functional observations.
//!
//! A curve `X(t) = Σ_ℓ a_ℓ v_ℓ(t)` is stored as its coefficient vector `a`.
//! Because the basis is orthonormal, L² inner products and norms of curves
//! are Euclidean inner products and norms of coefficient vectors.
//!
//! Basis ordering is `(1, √2 sin 2πt, √2 cos 2πt, √2 sin 4πt, √2 cos 4πt, ...)`.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance used when checking orthonormality by quadrature.
pub const GRAM_TOLERANCE: f64 = 1e-8;

/// Tolerance for the per-segment zero-mean property after demeaning.
pub const CENTERING_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum BasisKind {
    Fourier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct BasisSystem {
    dim: usize,
    kind: BasisKind,
}

/// Fourier system with `dim` functions.
pub fn fourier_basis(dim: usize) -> Result<BasisSystem> {
    if dim == 0 {
        return Err(Error::invalid_argument("basis dimension must be at least 1"));
    }
    Ok(BasisSystem {
        dim,
        kind: BasisKind::Fourier,
    })
}

impl BasisSystem {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    /// Value of the basis function with zero-based index `index` at `t`.
    pub fn eval(&self, index: usize, t: f64) -> f64 {
        assert!(index < self.dim, "basis index {index} out of range");
        match self.kind {
            BasisKind::Fourier => {
                if index == 0 {
                    return 1.0;
                }
                let freq = index.div_ceil(2) as f64;
                let arg = 2.0 * PI * freq * t;
                if index % 2 == 1 {
                    SQRT_2 * arg.sin()
                } else {
                    SQRT_2 * arg.cos()
                }
            }
        }
    }

    /// All basis functions evaluated at `t`.
    pub fn eval_all(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.dim, (0..self.dim).map(|l| self.eval(l, t)))
    }

    /// `points.len() × dim` design matrix.
    pub fn design_matrix(&self, points: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(points.len(), self.dim, |g, l| self.eval(l, points[g]))
    }

    /// Evaluate the curve with coefficients `coeffs` at `t`.
    pub fn reconstruct(&self, coeffs: &[f64], t: f64) -> f64 {
        coeffs
            .iter()
            .enumerate()
            .map(|(l, a)| a * self.eval(l, t))
            .sum()
    }
}

/// Equally spaced sample locations for a curve observed at `len` points.
///
/// Samples are placed at cell midpoints `(g + ½)/len`, an affine image of the
/// index range inside [0, 1].
pub fn sample_grid(len: usize) -> Vec<f64> {
    (0..len).map(|g| (g as f64 + 0.5) / len as f64).collect()
}

/// `n` curves stored as rows of an `n × D` coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSeries {
    coeffs: DMatrix<f64>,
    basis: BasisSystem,
}

impl FunctionalSeries {
    pub fn new(coeffs: DMatrix<f64>, basis: BasisSystem) -> Result<Self> {
        if coeffs.nrows() < 2 {
            return Err(Error::invalid_data(format!(
                "need at least 2 curves, got {}",
                coeffs.nrows()
            )));
        }
        if coeffs.ncols() != basis.dim() {
            return Err(Error::invalid_data(format!(
                "coefficient rows have {} entries but the basis has dimension {}",
                coeffs.ncols(),
                basis.dim()
            )));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_data("non-finite coefficient"));
        }
        Ok(Self { coeffs, basis })
    }

    pub fn len(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn basis(&self) -> &BasisSystem {
        &self.basis
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> DMatrix<f64> {
        self.coeffs
    }

    /// Sample mean curve.
    pub fn mean(&self) -> DVector<f64> {
        self.coeffs.row_mean().transpose()
    }

    /// Coefficients with the full-sample mean removed.
    pub fn centered_coeffs(&self) -> DMatrix<f64> {
        let mean = self.coeffs.row_mean();
        let mut out = self.coeffs.clone();
        for mut row in out.row_iter_mut() {
            row -= &mean;
        }
        out
    }

    pub fn inner(&self, i: usize, j: usize) -> f64 {
        self.coeffs.row(i).dot(&self.coeffs.row(j))
    }

    pub fn norm_sq(&self, i: usize) -> f64 {
        self.coeffs.row(i).norm_squared()
    }

    /// Multiply every curve by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            coeffs: &self.coeffs * c,
            basis: self.basis,
        }
    }

    /// Add the curve with coefficients `shift` to every curve.
    pub fn shifted(&self, shift: &DVector<f64>) -> Self {
        let mut coeffs = self.coeffs.clone();
        let shift = shift.transpose();
        for mut row in coeffs.row_iter_mut() {
            row += &shift;
        }
        Self {
            coeffs,
            basis: self.basis,
        }
    }

    /// Curves `range.start .. range.end` (zero based) as a new series.
    pub fn segment(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::invalid_argument(format!(
                "segment {start}..{end} out of range for {} curves",
                self.len()
            )));
        }
        Self::new(self.coeffs.rows(start, end - start).into_owned(), self.basis)
    }
}

/// Least-squares projection of sampled curves onto `basis`.
///
/// `raw` is `m × G`, one curve per row, sampled on [`sample_grid`]`(G)`.
pub fn smooth_to_basis(raw: &DMatrix<f64>, basis: &BasisSystem) -> Result<FunctionalSeries> {
    let curves: Vec<Vec<f64>> = raw.row_iter().map(|r| r.iter().copied().collect()).collect();
    smooth_curves(&curves, basis)
}

/// Like [`smooth_to_basis`] but each curve may have its own number of
/// samples (e.g. 365 and 366 day years); each is mapped onto [0, 1] on its
/// own grid.
pub fn smooth_curves(curves: &[Vec<f64>], basis: &BasisSystem) -> Result<FunctionalSeries> {
    let dim = basis.dim();
    let mut solvers: HashMap<usize, (DMatrix<f64>, nalgebra::Cholesky<f64, nalgebra::Dyn>)> =
        HashMap::new();
    let mut coeffs = DMatrix::zeros(curves.len(), dim);

    for (i, curve) in curves.iter().enumerate() {
        let len = curve.len();
        if len < dim {
            return Err(Error::UnderdeterminedFit { grid: len, dim });
        }
        if curve.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_data(format!("curve {} has non-finite samples", i + 1)));
        }
        if let Entry::Vacant(slot) = solvers.entry(len) {
            let design = basis.design_matrix(&sample_grid(len));
            let gram = design.tr_mul(&design);
            let chol = gram.cholesky().ok_or(Error::UnderdeterminedFit { grid: len, dim })?;
            slot.insert((design, chol));
        }
        let (design, chol) = &solvers[&len];
        let y = DVector::from_column_slice(curve);
        let a = chol.solve(&design.tr_mul(&y));
        coeffs.row_mut(i).copy_from(&a.transpose());
    }
    FunctionalSeries::new(coeffs, *basis)
}

/// Remove the sample mean within each segment delimited by `breaks`.
///
/// A break index `b` ends a segment after the `b`-th curve, so `breaks = [2]`
/// on four curves gives segments `{1, 2}` and `{3, 4}`. An empty list
/// demeans globally.
pub fn center_and_segment_demean(
    series: &FunctionalSeries,
    breaks: &[usize],
) -> Result<FunctionalSeries> {
    let n = series.len();
    let mut prev = 0;
    for &b in breaks {
        if b == 0 || b >= n {
            return Err(Error::invalid_argument(format!(
                "mean break {b} outside 1..{}",
                n - 1
            )));
        }
        if b <= prev {
            return Err(Error::invalid_argument("mean breaks must be strictly increasing"));
        }
        prev = b;
    }

    let mut coeffs = series.coeffs().clone();
    let bounds = std::iter::once(0)
        .chain(breaks.iter().copied())
        .chain(std::iter::once(n))
        .collect::<Vec<_>>();
    for w in bounds.windows(2) {
        let (start, end) = (w[0], w[1]);
        let mut block = coeffs.rows_mut(start, end - start);
        let mean = block.row_mean();
        for mut row in block.row_iter_mut() {
            row -= &mean;
        }
    }
    FunctionalSeries::new(coeffs, *series.basis())
}
