//! Kernel lag-window estimators of long-run (co)variances.
//!
//! For a stationary sequence of vectors `Θ_i` the estimator is
//!
//! ```text
//! Σ̂ = Σ_ℓ w(ℓ/h) Γ̂_ℓ,   Γ̂_ℓ = n⁻¹ Σ_{i∈I_ℓ} (Θ_i − Θ̄)(Θ_{i+ℓ} − Θ̄)ᵀ,
//! ```
//!
//! with `I_ℓ = {1, …, n−ℓ}` for `ℓ ≥ 0` and `Γ̂_{−ℓ} = Γ̂_ℓᵀ`. Autocovariances
//! are always scaled by `1/n`, never `1/(n−ℓ)`.
//!
//! The scores `θ̂_{i,j} = ⟨X_i − X̄, φ̂_j⟩² − λ̂_j` feed [`lrv_matrix`]; the
//! squared norms `‖X_i − X̄‖²` feed [`lrv_scalar`].

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::basis::FunctionalSeries;
use crate::error::{Error, Result};
use crate::spectrum::{CovarianceOperator, EigenSystem};

/// Largest condition number accepted by [`invert_lrv`].
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Bartlett,
    Parzen,
    /// Trapezoidal flat-top taper: 1 on `|u| ≤ ½`, linear to 0 at `|u| = 1`.
    FlatTop,
}

impl KernelKind {
    /// Lag weight `w(u)`; all kernels are supported on `[−1, 1]`.
    pub fn weight(self, u: f64) -> f64 {
        let a = u.abs();
        if a > 1.0 {
            return 0.0;
        }
        match self {
            KernelKind::Bartlett => 1.0 - a,
            KernelKind::Parzen => {
                if a <= 0.5 {
                    1.0 - 6.0 * a * a + 6.0 * a * a * a
                } else {
                    2.0 * (1.0 - a).powi(3)
                }
            }
            KernelKind::FlatTop => {
                if a <= 0.5 {
                    1.0
                } else {
                    2.0 * (1.0 - a)
                }
            }
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Bartlett => "bartlett",
            KernelKind::Parzen => "parzen",
            KernelKind::FlatTop => "flattop",
        })
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bartlett" => Ok(KernelKind::Bartlett),
            "parzen" => Ok(KernelKind::Parzen),
            "flattop" | "flat-top" => Ok(KernelKind::FlatTop),
            other => Err(Error::invalid_argument(format!("unknown kernel '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    /// `⌊n^{1/3}⌋`.
    Auto,
    Fixed(f64),
}

impl Bandwidth {
    pub fn resolve(self, n: usize) -> f64 {
        match self {
            Bandwidth::Auto => ((n as f64).cbrt() + 1e-9).floor().max(1.0),
            Bandwidth::Fixed(h) => h,
        }
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bandwidth::Auto => f.write_str("auto"),
            Bandwidth::Fixed(h) => write!(f, "{h}"),
        }
    }
}

impl FromStr for Bandwidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Bandwidth::Auto);
        }
        s.parse::<f64>()
            .map(Bandwidth::Fixed)
            .map_err(|_| Error::invalid_argument(format!("bandwidth '{s}' is neither a number nor 'auto'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: Bandwidth,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            kind: KernelKind::Bartlett,
            bandwidth: Bandwidth::Auto,
        }
    }
}

impl KernelSpec {
    pub fn new(kind: KernelKind, bandwidth: Bandwidth) -> Self {
        Self { kind, bandwidth }
    }

    /// Validated numeric bandwidth for a sample of size `n`.
    pub fn bandwidth_for(&self, n: usize) -> Result<f64> {
        let h = self.bandwidth.resolve(n);
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::invalid_argument(format!("bandwidth must be positive, got {h}")));
        }
        if h >= n as f64 {
            return Err(Error::invalid_argument(format!(
                "bandwidth {h} must be smaller than the sample size {n}"
            )));
        }
        Ok(h)
    }
}

/// `n × d` matrix of estimated scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    scores: DMatrix<f64>,
    col_means: DVector<f64>,
}

impl ScoreMatrix {
    pub fn from_matrix(scores: DMatrix<f64>) -> Self {
        let col_means = scores.row_mean().transpose();
        Self { scores, col_means }
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn col_means(&self) -> &DVector<f64> {
        &self.col_means
    }

    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    pub fn d(&self) -> usize {
        self.scores.ncols()
    }
}

/// Scores `θ̂_{i,j} = ⟨X_i − X̄, φ̂_j⟩² − λ̂_j(1)` for the full-sample
/// eigensystem `eig` of `c_full`.
pub fn scores(
    series: &FunctionalSeries,
    eig: &EigenSystem,
    c_full: &CovarianceOperator,
) -> Result<ScoreMatrix> {
    let dim = series.dim();
    if eig.eigenvectors.nrows() != dim || c_full.dim() != dim {
        return Err(Error::invalid_argument(format!(
            "dimension mismatch: series {dim}, eigenvectors {}, covariance {}",
            eig.eigenvectors.nrows(),
            c_full.dim()
        )));
    }
    let proj = series.centered_coeffs() * &eig.eigenvectors;
    let mut out = proj.map(|p| p * p);
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-eig.eigenvalues[j]);
    }
    Ok(ScoreMatrix::from_matrix(out))
}

fn lag_window_sum(x: &DMatrix<f64>, kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if n < 4 {
        return Err(Error::invalid_argument(format!(
            "long-run variance needs at least 4 observations, got {n}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid_data("non-finite value in long-run variance input"));
    }
    let h = kernel.bandwidth_for(n)?;
    let mean = x.row_mean();
    let mut dev = x.clone();
    for mut row in dev.row_iter_mut() {
        row -= &mean;
    }
    let inv_n = 1.0 / n as f64;
    let mut sigma = dev.tr_mul(&dev) * inv_n;
    for lag in 1..n {
        if lag as f64 > h {
            break;
        }
        let w = kernel.kind.weight(lag as f64 / h);
        if w == 0.0 {
            continue;
        }
        let lead = dev.rows(0, n - lag);
        let lagged = dev.rows(lag, n - lag);
        let gamma = lead.tr_mul(&lagged) * inv_n;
        sigma += (&gamma + gamma.transpose()) * w;
    }
    Ok((&sigma + sigma.transpose()) * 0.5)
}

/// Long-run covariance matrix `Σ̂_d` of the score rows.
pub fn lrv_matrix(scores: &ScoreMatrix, kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    lag_window_sum(scores.scores(), kernel)
}

/// Scalar long-run variance estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarLrv {
    pub value: f64,
    /// Unfloored lag-window sum.
    pub raw: f64,
    /// The raw estimate was not positive and `value` was floored at
    /// machine epsilon.
    pub floored: bool,
}

/// Long-run variance of a scalar sequence such as `‖X_i − X̄‖²`.
pub fn lrv_scalar(xi: &[f64], kernel: &KernelSpec) -> Result<ScalarLrv> {
    let x = DMatrix::from_column_slice(xi.len(), 1, xi);
    let raw = lag_window_sum(&x, kernel)?[(0, 0)];
    Ok(if raw > f64::EPSILON {
        ScalarLrv {
            value: raw,
            raw,
            floored: false,
        }
    } else {
        log::warn!("long-run variance estimate {raw:e} floored at machine epsilon");
        ScalarLrv {
            value: f64::EPSILON,
            raw,
            floored: true,
        }
    })
}

/// Inverse of a symmetric long-run covariance matrix via its
/// eigendecomposition.
pub fn invert_lrv(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sigma.is_square() || sigma.nrows() == 0 {
        return Err(Error::invalid_argument("long-run covariance must be square and non-empty"));
    }
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let smallest = eig.eigenvalues.min();
    let largest = eig.eigenvalues.max();
    if !(smallest > 0.0) || largest / smallest > MAX_CONDITION {
        return Err(Error::SingularLrv { smallest });
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    let q = &eig.eigenvectors;
    let inv = q * DMatrix::from_diagonal(&inv_vals) * q.transpose();
    Ok((&inv + inv.transpose()) * 0.5)
}
