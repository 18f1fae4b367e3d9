//! Partial-sample covariance operators, their spectra, and the eigenvalue
//! and trace processes indexed by the sample fraction `k/n`.
//!
//! All partial-sample quantities use the full-sample mean and the `1/n`
//! normalization, so `Ĉ_{k/n} = n⁻¹ Σ_{i≤k} (X_i − X̄)(X_i − X̄)ᵀ` grows
//! monotonically (in the Loewner order) with `k`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::basis::FunctionalSeries;
use crate::error::{Error, Result};

/// Negative eigenvalues below this magnitude are treated as round-off.
pub const CLIP_WARN_THRESHOLD: f64 = 1e-8;

/// Relative spectral gap below which the top-d eigenspaces are reported as
/// not well separated.
pub const GAP_WARN_RATIO: f64 = 1e-10;

/// Coefficient representation of a (partial-sample) covariance kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceOperator {
    mat: DMatrix<f64>,
    fraction: f64,
}

impl CovarianceOperator {
    /// Wrap a square matrix, symmetrizing it.
    pub fn from_matrix(mat: DMatrix<f64>, fraction: f64) -> Result<Self> {
        if !mat.is_square() || mat.nrows() == 0 {
            return Err(Error::invalid_argument("covariance matrix must be square and non-empty"));
        }
        let sym = (&mat + mat.transpose()) * 0.5;
        Ok(Self { mat: sym, fraction })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    /// Sample fraction `k/n` the operator was built from.
    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace()
    }
}

/// Leading eigenpairs of a covariance operator.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    /// Nonincreasing, clipped at zero.
    pub eigenvalues: DVector<f64>,
    /// `D × d`, unit columns, largest-magnitude coordinate positive.
    pub eigenvectors: DMatrix<f64>,
    pub warnings: Vec<String>,
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

/// `λ̂_j(k/n)` for `k = ⌈nδ⌉, ..., n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenProcess {
    n: usize,
    start: usize,
    delta: f64,
    values: DMatrix<f64>,
}

impl EigenProcess {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    /// First grid index `⌈nδ⌉`.
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn grid(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.n
    }

    /// Rows follow [`EigenProcess::grid`].
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Eigenvalues at grid index `k`.
    pub fn at(&self, k: usize) -> DVector<f64> {
        assert!(k >= self.start && k <= self.n, "k = {k} not on grid");
        self.values.row(k - self.start).transpose()
    }

    /// `Λ̂_d(1)`.
    pub fn full(&self) -> DVector<f64> {
        self.at(self.n)
    }
}

/// `T_n(k/n)` for `k = 1..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceProcess {
    values: Vec<f64>,
}

impl TraceProcess {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Entry `k − 1` holds `T_n(k/n)`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.values[k - 1]
        }
    }

    pub fn full(&self) -> f64 {
        *self.values.last().expect("trace process is never empty")
    }
}

/// First grid index `⌈nδ⌉`, never below 1.
pub fn grid_start(n: usize, delta: f64) -> usize {
    // guard against n·δ landing a hair above an integer
    let raw = (n as f64 * delta - 1e-9).ceil();
    (raw.max(1.0) as usize).min(n)
}

/// `(1/n) Σ_{i≤k} (X_i − X̄)(X_i − X̄)ᵀ`.
pub fn partial_covariance(series: &FunctionalSeries, k: usize) -> Result<CovarianceOperator> {
    let n = series.len();
    if k == 0 || k > n {
        return Err(Error::invalid_argument(format!("k = {k} outside 1..{n}")));
    }
    let centered = series.centered_coeffs();
    let head = centered.rows(0, k);
    let mat = head.tr_mul(&head) / n as f64;
    CovarianceOperator::from_matrix(mat, k as f64 / n as f64)
}

/// Sample covariance of a segment with its own mean and `1/len` scaling.
pub fn segment_covariance(series: &FunctionalSeries) -> CovarianceOperator {
    let c = series.centered_coeffs();
    let mat = c.tr_mul(&c) / series.len() as f64;
    CovarianceOperator::from_matrix(mat, 1.0).expect("series has positive dimension")
}

fn sorted_eigenvalues(mat: &DMatrix<f64>) -> Vec<f64> {
    let mut vals: Vec<f64> = mat.clone().symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    vals
}

/// Every eigenvalue of `c`, nonincreasing, negative round-off clipped to 0.
pub fn full_spectrum(c: &CovarianceOperator) -> Vec<f64> {
    sorted_eigenvalues(c.matrix())
        .into_iter()
        .map(|v| v.max(0.0))
        .collect()
}

/// Top-`d` eigenpairs of `c`.
pub fn eigen_decompose(c: &CovarianceOperator, d: usize) -> Result<EigenSystem> {
    let dim = c.dim();
    if d == 0 || d > dim {
        return Err(Error::invalid_argument(format!("d = {d} outside 1..{dim}")));
    }
    let eig = SymmetricEigen::new(c.matrix().clone());
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut warnings = Vec::new();
    let most_negative = eig.eigenvalues.iter().copied().fold(0.0f64, f64::min);
    if most_negative < -CLIP_WARN_THRESHOLD {
        warnings.push(format!(
            "clipped negative eigenvalue {most_negative:e} to zero; covariance may not be positive semidefinite"
        ));
    }

    let mut values = DVector::zeros(d);
    let mut vectors = DMatrix::zeros(dim, d);
    for (col, &src) in order.iter().take(d).enumerate() {
        values[col] = eig.eigenvalues[src].max(0.0);
        let mut v = eig.eigenvectors.column(src).into_owned();
        v /= v.norm();
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(col, &v);
    }
    Ok(EigenSystem {
        eigenvalues: values,
        eigenvectors: vectors,
        warnings,
    })
}

/// Warning text when `λ_d − λ_{d+1}` is negligible relative to `λ_1`.
pub fn spectral_gap_warning(spectrum: &[f64], d: usize) -> Option<String> {
    if d == 0 || d >= spectrum.len() || spectrum[0] <= 0.0 {
        return None;
    }
    let gap = spectrum[d - 1] - spectrum[d];
    (gap < GAP_WARN_RATIO * spectrum[0]).then(|| {
        format!(
            "eigenvalues {d} and {} are not separated (gap {gap:e}); the leading {d} eigenspaces may not be identifiable",
            d + 1
        )
    })
}

/// Partial-sample eigenvalue process on the grid `⌈nδ⌉..=n`.
pub fn eigenvalue_process(series: &FunctionalSeries, d: usize, delta: f64) -> Result<EigenProcess> {
    let n = series.len();
    let dim = series.dim();
    if d == 0 || d > dim {
        return Err(Error::invalid_argument(format!("d = {d} outside 1..{dim}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid_argument(format!("delta = {delta} outside (0, 1)")));
    }
    let start = grid_start(n, delta);
    let centered = series.centered_coeffs();
    let scale = 1.0 / n as f64;

    let mut cumulative = Vec::with_capacity(n - start + 1);
    let mut acc = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..n {
        let row = centered.row(i);
        acc.ger(scale, &row.transpose(), &row.transpose(), 1.0);
        if i + 1 >= start {
            cumulative.push(acc.clone());
        }
    }

    let rows: Vec<Vec<f64>> = cumulative
        .par_iter()
        .map(|m| {
            let sym = (m + m.transpose()) * 0.5;
            sorted_eigenvalues(&sym)
                .into_iter()
                .take(d)
                .map(|v| v.max(0.0))
                .collect()
        })
        .collect();

    let values = DMatrix::from_fn(rows.len(), d, |r, j| rows[r][j]);
    Ok(EigenProcess {
        n,
        start,
        delta,
        values,
    })
}

/// `T_n(k/n) = (1/n) Σ_{i≤k} ‖X_i − X̄‖²`.
pub fn trace_process(series: &FunctionalSeries) -> TraceProcess {
    let n = series.len() as f64;
    let centered = series.centered_coeffs();
    let values = centered
        .row_iter()
        .scan(0.0, |acc, row| {
            *acc += row.norm_squared() / n;
            Some(*acc)
        })
        .collect();
    TraceProcess { values }
}

/// Smallest `d` whose cumulative share of the spectrum reaches `v`.
pub fn tve_dimension(eigenvalues: &[f64], v: f64) -> Result<usize> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::invalid_argument(format!("TVE threshold {v} outside (0, 1)")));
    }
    if eigenvalues.iter().any(|x| *x < 0.0 || !x.is_finite()) {
        return Err(Error::invalid_argument("eigenvalues must be finite and nonnegative"));
    }
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateSpectrum("all eigenvalues are zero".into()));
    }
    let mut acc = 0.0;
    for (j, &lam) in eigenvalues.iter().enumerate() {
        acc += lam;
        // relative slack absorbs summation round-off at exact thresholds
        if acc / total >= v - 1e-12 {
            return Ok(j + 1);
        }
    }
    Ok(eigenvalues.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::fourier_basis;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn two_point() -> FunctionalSeries {
        FunctionalSeries::new(
            DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            fourier_basis(1).unwrap(),
        )
        .unwrap()
    }

    fn random_series(n: usize, dim: usize, seed: u64) -> FunctionalSeries {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, dim, |_, l| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z / (l as f64 + 1.0)
        });
        FunctionalSeries::new(m, fourier_basis(dim).unwrap()).unwrap()
    }

    /// Cyclic Jacobi rotations; independent of the LAPACK-style path.
    fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
        let n = a.nrows();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
                .map(|(p, q)| a[(p, q)].powi(2))
                .sum();
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut v: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        v.sort_by(|x, y| y.total_cmp(x));
        v
    }

    #[test]
    fn two_point_covariances() {
        let s = two_point();
        assert_abs_diff_eq!(partial_covariance(&s, 2).unwrap().matrix()[(0, 0)], 1.0);
        assert_abs_diff_eq!(partial_covariance(&s, 1).unwrap().matrix()[(0, 0)], 0.5);
        assert!(matches!(partial_covariance(&s, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(partial_covariance(&s, 3), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn partial_covariance_matches_kernel_quadrature() {
        let s = random_series(20, 4, 5);
        let basis = *s.basis();
        let c = partial_covariance(&s, 13).unwrap();
        let centered = s.centered_coeffs();
        let m = 500;
        let nodes: Vec<f64> = (0..m).map(|g| (g as f64 + 0.5) / m as f64).collect();
        // kernel on the grid from reconstructed curves
        let curves: Vec<Vec<f64>> = (0..13)
            .map(|i| {
                let a: Vec<f64> = centered.row(i).iter().copied().collect();
                nodes.iter().map(|&t| basis.reconstruct(&a, t)).collect()
            })
            .collect();
        for a in 0..4 {
            for b in 0..4 {
                let mut acc = 0.0;
                for (gi, &t) in nodes.iter().enumerate() {
                    for (gj, &u) in nodes.iter().enumerate() {
                        let kern: f64 =
                            curves.iter().map(|x| x[gi] * x[gj]).sum::<f64>() / 20.0;
                        acc += kern * basis.eval(a, t) * basis.eval(b, u);
                    }
                }
                acc /= (m * m) as f64;
                assert!((acc - c.matrix()[(a, b)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn diagonal_decomposition() {
        let c = CovarianceOperator::from_matrix(
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.9, 0.4, 0.1])),
            1.0,
        )
        .unwrap();
        let e = eigen_decompose(&c, 2).unwrap();
        assert_abs_diff_eq!(e.eigenvalues[0], 0.9, epsilon = 1e-14);
        assert_abs_diff_eq!(e.eigenvalues[1], 0.4, epsilon = 1e-14);
        assert_abs_diff_eq!(e.eigenvectors[(0, 0)], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.eigenvectors[(1, 1)], 1.0, epsilon = 1e-14);
        assert!(eigen_decompose(&c, 0).is_err());
        assert!(eigen_decompose(&c, 4).is_err());

        let one = CovarianceOperator::from_matrix(DMatrix::from_element(1, 1, 1.0), 1.0).unwrap();
        assert_abs_diff_eq!(eigen_decompose(&one, 1).unwrap().eigenvalues[0], 1.0);
    }

    #[test]
    fn decomposition_matches_jacobi_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let g: DMatrix<f64> = DMatrix::from_fn(6, 6, |_, _| StandardNormal.sample(&mut rng));
            let a = &g * g.transpose();
            let c = CovarianceOperator::from_matrix(a.clone(), 1.0).unwrap();
            let e = eigen_decompose(&c, 6).unwrap();
            let oracle = jacobi_eigenvalues(a.clone());
            for j in 0..6 {
                assert!((e.eigenvalues[j] - oracle[j]).abs() < 1e-10);
                let u = e.eigenvectors.column(j);
                let resid = &a * u - u * e.eigenvalues[j];
                assert!(resid.amax() < 1e-8);
                let pivot = u.iamax();
                assert!(u[pivot] > 0.0);
            }
            let gram = e.eigenvectors.tr_mul(&e.eigenvectors);
            assert!((gram - DMatrix::identity(6, 6)).amax() < 1e-10);
        }
    }

    #[test]
    fn clipping_warning() {
        let c = CovarianceOperator::from_matrix(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-6])),
            1.0,
        )
        .unwrap();
        let e = eigen_decompose(&c, 2).unwrap();
        assert_eq!(e.eigenvalues[1], 0.0);
        assert_eq!(e.warnings.len(), 1);
    }

    #[test]
    fn gap_warning() {
        assert!(spectral_gap_warning(&[1.0, 0.5, 0.5], 2).is_some());
        assert!(spectral_gap_warning(&[1.0, 0.5, 0.4], 2).is_none());
        assert!(spectral_gap_warning(&[1.0, 0.5], 2).is_none());
    }

    #[test]
    fn two_point_processes() {
        let s = two_point();
        let p = eigenvalue_process(&s, 1, 0.5).unwrap();
        assert_eq!(p.grid(), 1..=2);
        assert_abs_diff_eq!(p.at(1)[0], 0.5);
        assert_abs_diff_eq!(p.at(2)[0], 1.0);
        let t = trace_process(&s);
        assert_eq!(t.values(), &[0.5, 1.0]);
    }

    #[test]
    fn process_endpoint_matches_full_decomposition() {
        let s = random_series(40, 5, 9);
        let p = eigenvalue_process(&s, 3, 0.2).unwrap();
        let full = eigen_decompose(&partial_covariance(&s, 40).unwrap(), 3).unwrap();
        assert_eq!(p.start(), 8);
        for j in 0..3 {
            assert!((p.full()[j] - full.eigenvalues[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_series_has_zero_trace() {
        let s = FunctionalSeries::new(DMatrix::from_element(5, 3, 2.5), fourier_basis(3).unwrap())
            .unwrap();
        assert!(trace_process(&s).values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tve_selection() {
        let spec = [0.6, 0.3, 0.1];
        assert_eq!(tve_dimension(&spec, 0.85).unwrap(), 2);
        assert_eq!(tve_dimension(&spec, 0.95).unwrap(), 3);
        assert_eq!(tve_dimension(&spec, 0.9).unwrap(), 2);
        assert_eq!(tve_dimension(&spec, 1e-9).unwrap(), 1);
        assert!(matches!(
            tve_dimension(&[0.0, 0.0], 0.5),
            Err(Error::DegenerateSpectrum(_))
        ));
        assert!(tve_dimension(&spec, 1.0).is_err());
    }

    #[test]
    fn grid_start_rounding() {
        assert_eq!(grid_start(500, 0.1), 50);
        assert_eq!(grid_start(100, 0.1), 10);
        assert_eq!(grid_start(7, 0.1), 1);
        assert_eq!(grid_start(10, 0.01), 1);
        assert_eq!(grid_start(3, 0.5), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn eigenvalues_monotone_in_k(seed in 0u64..1000, n in 5usize..40) {
            let s = random_series(n, 4, seed);
            let p = eigenvalue_process(&s, 3, 0.1).unwrap();
            let v = p.values();
            for r in 1..v.nrows() {
                for j in 0..3 {
                    prop_assert!(v[(r, j)] >= v[(r - 1, j)] - 1e-12);
                }
            }
            for r in 0..v.nrows() {
                for j in 1..3 {
                    prop_assert!(v[(r, j)] <= v[(r, j - 1)]);
                }
            }
        }

        #[test]
        fn trace_identity_and_equivariance(seed in 0u64..1000, c in 0.1f64..10.0) {
            let s = random_series(15, 5, seed);
            let t = trace_process(&s);
            let full = partial_covariance(&s, 15).unwrap();
            prop_assert!((t.full() - full.trace()).abs() < 1e-10);
            let spec_sum: f64 = full_spectrum(&full).iter().sum();
            prop_assert!((t.full() - spec_sum).abs() < 1e-10);
            prop_assert!(t.values().windows(2).all(|w| w[1] >= w[0]));

            let scaled = trace_process(&s.scaled(c));
            for (a, b) in t.values().iter().zip(scaled.values()) {
                prop_assert!((b - c * c * a).abs() <= 1e-10 * (1.0 + b.abs()));
            }
            let p = eigenvalue_process(&s, 2, 0.2).unwrap();
            let ps = eigenvalue_process(&s.scaled(c), 2, 0.2).unwrap();
            prop_assert!((ps.values() - p.values() * (c * c)).amax() <= 1e-10 * (1.0 + ps.values().amax()));
        }

        #[test]
        fn shift_and_permutation(seed in 0u64..1000) {
            let s = random_series(12, 4, seed);
            let shift = DVector::from_vec(vec![3.0, -1.0, 0.5, 2.0]);
            let shifted = s.shifted(&shift);
            let p = eigenvalue_process(&s, 2, 0.25).unwrap();
            let q = eigenvalue_process(&shifted, 2, 0.25).unwrap();
            prop_assert!((p.values() - q.values()).amax() < 1e-12);

            let mut rows: Vec<usize> = (0..12).collect();
            rows.reverse();
            let perm = FunctionalSeries::new(s.coeffs().select_rows(&rows), *s.basis()).unwrap();
            let a = partial_covariance(&s, 12).unwrap();
            let b = partial_covariance(&perm, 12).unwrap();
            prop_assert!((a.matrix() - b.matrix()).amax() < 1e-12);
            prop_assert!((trace_process(&s).full() - trace_process(&perm).full()).abs() < 1e-12);
        }
    }
}
