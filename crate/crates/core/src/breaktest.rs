//! CUSUM statistics for breaks in the leading eigenvalues and the trace of
//! the covariance operator, their Brownian-bridge reference distributions,
//! and the accompanying break-date estimators.
//!
//! Three tests are provided:
//!
//! * joint: `J_n = max_k κ_n(k/n)ᵀ Σ̂_d⁻¹ κ_n(k/n)` over `k ≥ ⌈nδ⌉`, with
//!   `κ_n(x) = √n (Λ̂_d(x) − ⌊nx⌋/n · Λ̂_d(1))`; limit `sup_{x≥δ} Σ_j B_j(x)²`.
//! * individual: `I_{j,n} = max_k √n |λ̂_j(k/n) − (k/n) λ̂_j(1)| / σ̂_j` over
//!   `k ≥ ⌈nδ⌉`; limit `sup_{x≥δ} |B(x)|`.
//! * trace: `M_n = max_k √n |T_n(k/n) − (k/n) T_n(1)| / σ̂_T` over all `k`;
//!   limit `sup_x |B(x)|`.
//!
//! Every maximum is taken over the integer grid; ties go to the smallest `k`.
//! The argmax is the break-date estimate.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::basis::FunctionalSeries;
use crate::error::{Error, Result};
use crate::longrun::{self, KernelSpec, ScalarLrv};
use crate::seed::stream_rng;
use crate::spectrum::{self, EigenProcess, TraceProcess};

/// `−ζ(½)/√(2π)`: mean overshoot of a continuous Brownian supremum over its
/// discretely monitored counterpart, per unit `√Δ`.
pub const DISCRETE_MONITORING_SHIFT: f64 = 0.582_597_157_939_010_6;

pub const MIN_GRID_POINTS: usize = 100;
pub const MIN_REPLICATIONS: usize = 1000;
pub const DEFAULT_GRID_POINTS: usize = 1000;
pub const DEFAULT_REPLICATIONS: usize = 10_000;

const SQRT_N_NOTE: &str =
    "statistic includes the sqrt(n) factor required by the functional CLT scaling";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LimitFamily {
    /// `sup_{x≥δ} Σ_{j≤d} B_j(x)²`.
    Joint { d: usize },
    /// `sup_{x≥δ} |B(x)|`.
    Individual,
    /// `sup_{x∈[0,1]} |B(x)|`.
    Trace,
}

impl fmt::Display for LimitFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LimitFamily::Joint { .. } => f.write_str("J"),
            LimitFamily::Individual => f.write_str("I"),
            LimitFamily::Trace => f.write_str("M"),
        }
    }
}

/// Monte-Carlo specification of a limit distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitDistSpec {
    pub family: LimitFamily,
    /// Lower end of the supremum window; ignored (zero) for the trace family.
    pub delta: f64,
    pub grid_points: usize,
    pub replications: usize,
    pub seed: u64,
}

impl LimitDistSpec {
    pub fn joint(d: usize, delta: f64) -> Self {
        Self::with_defaults(LimitFamily::Joint { d }, delta)
    }

    pub fn individual(delta: f64) -> Self {
        Self::with_defaults(LimitFamily::Individual, delta)
    }

    pub fn trace() -> Self {
        Self::with_defaults(LimitFamily::Trace, 0.0)
    }

    fn with_defaults(family: LimitFamily, delta: f64) -> Self {
        Self {
            family,
            delta,
            grid_points: DEFAULT_GRID_POINTS,
            replications: DEFAULT_REPLICATIONS,
            seed: 0x5eed,
        }
    }

    pub fn grid(mut self, grid_points: usize) -> Self {
        self.grid_points = grid_points;
        self
    }

    pub fn reps(mut self, replications: usize) -> Self {
        self.replications = replications;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn d(&self) -> usize {
        match self.family {
            LimitFamily::Joint { d } => d,
            _ => 1,
        }
    }

    fn window_start(&self) -> f64 {
        match self.family {
            LimitFamily::Trace => 0.0,
            _ => self.delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_points < MIN_GRID_POINTS {
            return Err(Error::invalid_argument(format!(
                "limit grid needs at least {MIN_GRID_POINTS} points, got {}",
                self.grid_points
            )));
        }
        if self.replications < MIN_REPLICATIONS {
            return Err(Error::invalid_argument(format!(
                "limit simulation needs at least {MIN_REPLICATIONS} replications, got {}",
                self.replications
            )));
        }
        if let LimitFamily::Joint { d } = self.family {
            if d == 0 {
                return Err(Error::invalid_argument("joint limit needs d >= 1"));
            }
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::invalid_argument(format!(
                "delta = {} outside [0, 1)",
                self.delta
            )));
        }
        Ok(())
    }

    fn cache_key(&self) -> String {
        format!(
            "family={} d={} delta={} grid={} reps={} seed={} shift={}",
            self.family,
            self.d(),
            self.window_start(),
            self.grid_points,
            self.replications,
            self.seed,
            DISCRETE_MONITORING_SHIFT
        )
    }

    fn cache_file_name(&self) -> String {
        format!(
            "{}_d{}_delta{}_g{}_r{}_s{}.txt",
            self.family,
            self.d(),
            self.window_start(),
            self.grid_points,
            self.replications,
            self.seed
        )
    }
}

/// Sorted Monte-Carlo sample from a limit distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSample {
    spec: LimitDistSpec,
    sorted: Vec<f64>,
}

/// One simulated supremum. The path is driven by the stream
/// `(seed, replication)` so families sharing a seed share their paths.
fn simulate_one(spec: &LimitDistSpec, replication: usize, norm_sq: &mut [f64], walk: &mut [f64]) -> f64 {
    let g = spec.grid_points;
    let dt = 1.0 / g as f64;
    let sd = dt.sqrt();
    let mut rng = stream_rng(spec.seed, &[replication as u64]);
    norm_sq.iter_mut().for_each(|v| *v = 0.0);
    for _ in 0..spec.d() {
        let mut w = 0.0;
        walk[0] = 0.0;
        for slot in walk.iter_mut().skip(1) {
            let z: f64 = StandardNormal.sample(&mut rng);
            w += sd * z;
            *slot = w;
        }
        let end = walk[g];
        for (i, acc) in norm_sq.iter_mut().enumerate() {
            let b = walk[i] - (i as f64 * dt) * end;
            *acc += b * b;
        }
    }
    let first = ((spec.window_start() * g as f64) - 1e-9).ceil().max(0.0) as usize;
    let max_sq = norm_sq[first..].iter().copied().fold(0.0f64, f64::max);
    let sup_norm = max_sq.sqrt() + DISCRETE_MONITORING_SHIFT * sd;
    match spec.family {
        LimitFamily::Joint { .. } => sup_norm * sup_norm,
        _ => sup_norm,
    }
}

impl ReferenceSample {
    /// Simulate `spec.replications` suprema of Brownian-bridge functionals.
    ///
    /// Bridges are built from `G` scaled Gaussian increments and the grid
    /// supremum of the norm `(Σ_j B_j²)^{1/2}` is shifted by
    /// [`DISCRETE_MONITORING_SHIFT`]`·G^{-1/2}` to account for excursions
    /// between grid points.
    pub fn simulate(spec: LimitDistSpec) -> Result<Self> {
        spec.validate()?;
        let g = spec.grid_points;
        let mut sample: Vec<f64> = (0..spec.replications)
            .into_par_iter()
            .map_init(
                || (vec![0.0; g + 1], vec![0.0; g + 1]),
                |(norm_sq, walk), r| simulate_one(&spec, r, norm_sq, walk),
            )
            .collect();
        sample.sort_by(f64::total_cmp);
        Ok(Self {
            spec,
            sorted: sample,
        })
    }

    /// Load from `cache_dir` if a valid table for `spec` exists, otherwise
    /// simulate and store. Returns whether the cache was hit.
    pub fn load_or_simulate(spec: LimitDistSpec, cache_dir: &Path) -> Result<(Self, bool)> {
        spec.validate()?;
        let path = cache_dir.join(spec.cache_file_name());
        if let Some(sample) = read_cache(&path, &spec) {
            return Ok((sample, true));
        }
        let sample = Self::simulate(spec)?;
        if let Err(e) = write_cache(&path, &sample) {
            log::warn!("could not write quantile cache {}: {e}", path.display());
        }
        Ok((sample, false))
    }

    pub fn spec(&self) -> &LimitDistSpec {
        &self.spec
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// The `⌈αR⌉`-th largest simulated value.
    ///
    /// With this choice `statistic > quantile(α)` holds exactly when
    /// `p_value(statistic) < α`.
    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid_argument(format!("alpha = {alpha} outside (0, 1)")));
        }
        let r = self.sorted.len();
        let k = ((alpha * r as f64) - 1e-9).ceil().clamp(1.0, r as f64) as usize;
        Ok(self.sorted[r - k])
    }

    /// Share of simulated values at least as large as `statistic`.
    pub fn p_value(&self, statistic: f64) -> f64 {
        let below = self.sorted.partition_point(|&v| v < statistic);
        (self.sorted.len() - below) as f64 / self.sorted.len() as f64
    }
}

fn read_cache(path: &Path, spec: &LimitDistSpec) -> Option<ReferenceSample> {
    let file = std::fs::File::open(path).ok()?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next()?.ok()?;
    if header.trim_start_matches("# ").trim() != spec.cache_key() {
        return None;
    }
    let mut sorted = Vec::with_capacity(spec.replications);
    for line in lines {
        let v: f64 = line.ok()?.trim().parse().ok()?;
        if !v.is_finite() {
            return None;
        }
        sorted.push(v);
    }
    if sorted.len() != spec.replications || !sorted.windows(2).all(|w| w[0] <= w[1]) {
        return None;
    }
    Some(ReferenceSample { spec: *spec, sorted })
}

fn write_cache(path: &Path, sample: &ReferenceSample) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp: PathBuf = path.with_extension("tmp");
    {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        writeln!(out, "# {}", sample.spec.cache_key())?;
        for v in &sample.sorted {
            writeln!(out, "{v}")?;
        }
        out.flush()?;
    }
    std::fs::rename(tmp, path)
}

/// Empirical `(1 − α)` quantile of the limit law together with the full
/// reference sample used for p-values.
pub fn limit_quantile(spec: LimitDistSpec, alpha: f64) -> Result<(f64, ReferenceSample)> {
    let sample = ReferenceSample::simulate(spec)?;
    let q = sample.quantile(alpha)?;
    Ok((q, sample))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestKind {
    Joint,
    /// One-based component index.
    Individual(usize),
    Trace,
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestKind::Joint => f.write_str("J"),
            TestKind::Individual(j) => write!(f, "I{j}"),
            TestKind::Trace => f.write_str("M"),
        }
    }
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "J" => Ok(TestKind::Joint),
            "M" => Ok(TestKind::Trace),
            _ => s
                .strip_prefix('I')
                .and_then(|j| j.parse().ok())
                .filter(|&j| j >= 1)
                .map(TestKind::Individual)
                .ok_or_else(|| Error::invalid_argument(format!("unknown test '{s}'"))),
        }
    }
}

impl Serialize for TestKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub test: TestKind,
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub break_index: usize,
    pub break_fraction: f64,
    pub n: usize,
    pub d: usize,
    pub delta: f64,
    pub kernel: String,
    pub bandwidth: f64,
    pub mc_grid: usize,
    pub mc_reps: usize,
    pub mc_seed: u64,
    pub diagnostics: Vec<String>,
}

/// `κ_n(k/n)` for every grid index, rows following `process.grid()`.
pub fn cusum_vector(process: &EigenProcess) -> DMatrix<f64> {
    let n = process.n() as f64;
    let full = process.full();
    let start = process.start();
    let mut out = process.values().clone();
    for (r, mut row) in out.row_iter_mut().enumerate() {
        let frac = (start + r) as f64 / n;
        for (j, v) in row.iter_mut().enumerate() {
            *v = n.sqrt() * (*v - frac * full[j]);
        }
    }
    out
}

/// `√n (T_n(k/n) − (k/n) T_n(1))` for `k = 1..n`.
pub fn trace_cusum(trace: &TraceProcess) -> Vec<f64> {
    let n = trace.n() as f64;
    let full = trace.full();
    trace
        .values()
        .iter()
        .enumerate()
        .map(|(i, t)| n.sqrt() * (t - (i + 1) as f64 / n * full))
        .collect()
}

/// First index of the maximum (ties resolved towards the start).
fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Trace process and the long-run variance of `‖X_i − X̄‖²`.
#[derive(Debug, Clone)]
pub struct TraceStatistics {
    n: usize,
    kernel: KernelSpec,
    bandwidth: f64,
    trace: TraceProcess,
    sigma_t: ScalarLrv,
    xi_mean: f64,
}

impl TraceStatistics {
    pub fn compute(series: &FunctionalSeries, kernel: KernelSpec) -> Result<Self> {
        let n = series.len();
        let bandwidth = kernel.bandwidth_for(n)?;
        let trace = spectrum::trace_process(series);
        if !(trace.full() > f64::MIN_POSITIVE) {
            return Err(Error::DegenerateSpectrum(
                "all curves coincide after centering; the trace is zero".into(),
            ));
        }
        let xi: Vec<f64> = series
            .centered_coeffs()
            .row_iter()
            .map(|r| r.norm_squared())
            .collect();
        let xi_mean = xi.iter().sum::<f64>() / n as f64;
        let sigma_t = longrun::lrv_scalar(&xi, &kernel)?;
        Ok(Self {
            n,
            kernel,
            bandwidth,
            trace,
            sigma_t,
            xi_mean,
        })
    }

    pub fn process(&self) -> &TraceProcess {
        &self.trace
    }

    /// `σ̂_T²` after flooring.
    pub fn sigma_trace(&self) -> ScalarLrv {
        self.sigma_t
    }

    /// `(M_n, break index)`.
    pub fn statistic(&self) -> Result<(f64, usize)> {
        if self.sigma_t.raw.abs() <= 1e-14 * self.xi_mean * self.xi_mean {
            return Err(Error::SingularLrv {
                smallest: self.sigma_t.raw,
            });
        }
        let sd = self.sigma_t.value.sqrt();
        let (i, stat) = argmax(trace_cusum(&self.trace).into_iter().map(|v| v.abs() / sd));
        Ok((stat, i + 1))
    }

    fn diagnostics(&self) -> Vec<String> {
        let mut out = vec![SQRT_N_NOTE.to_string()];
        if self.sigma_t.floored {
            out.push(format!(
                "trace long-run variance estimate {:e} was not positive and was floored at machine epsilon",
                self.sigma_t.raw
            ));
        }
        out
    }

    pub fn test(&self, reference: &ReferenceSample, alpha: f64) -> Result<TestReport> {
        check_family(reference, LimitFamily::Trace, 0.0)?;
        let (stat, k) = self.statistic()?;
        ReportBuilder {
            n: self.n,
            d: 0,
            delta: 0.0,
            kernel: self.kernel,
            bandwidth: self.bandwidth,
        }
        .build(TestKind::Trace, stat, k, reference, alpha, self.diagnostics())
    }
}

/// Everything the tests share for one series: eigenvalue and trace
/// processes and the long-run (co)variance estimates.
#[derive(Debug, Clone)]
pub struct BreakStatistics {
    n: usize,
    d: usize,
    delta: f64,
    kernel: KernelSpec,
    bandwidth: f64,
    process: EigenProcess,
    sigma: DMatrix<f64>,
    trace: TraceStatistics,
    warnings: Vec<String>,
}

fn check_family(reference: &ReferenceSample, want: LimitFamily, delta: f64) -> Result<()> {
    let spec = reference.spec();
    if spec.family != want {
        let d_of = |f: LimitFamily| match f {
            LimitFamily::Joint { d } => d,
            _ => 1,
        };
        return Err(Error::invalid_argument(format!(
            "reference sample is for family {} (d = {}), test needs {} (d = {})",
            spec.family,
            d_of(spec.family),
            want,
            d_of(want)
        )));
    }
    if want != LimitFamily::Trace && (spec.delta - delta).abs() > 1e-12 {
        return Err(Error::invalid_argument(format!(
            "reference sample simulated for delta = {}, test uses delta = {delta}",
            spec.delta
        )));
    }
    Ok(())
}

struct ReportBuilder {
    n: usize,
    d: usize,
    delta: f64,
    kernel: KernelSpec,
    bandwidth: f64,
}

impl ReportBuilder {
    fn build(
        &self,
        test: TestKind,
        statistic: f64,
        break_index: usize,
        reference: &ReferenceSample,
        alpha: f64,
        diagnostics: Vec<String>,
    ) -> Result<TestReport> {
        let critical_value = reference.quantile(alpha)?;
        let p_value = reference.p_value(statistic);
        let spec = reference.spec();
        Ok(TestReport {
            test,
            statistic,
            critical_value,
            p_value,
            alpha,
            reject: statistic > critical_value,
            break_index,
            break_fraction: break_index as f64 / self.n as f64,
            n: self.n,
            d: self.d,
            delta: self.delta,
            kernel: self.kernel.kind.to_string(),
            bandwidth: self.bandwidth,
            mc_grid: spec.grid_points,
            mc_reps: spec.replications,
            mc_seed: spec.seed,
            diagnostics,
        })
    }
}

impl BreakStatistics {
    pub fn compute(
        series: &FunctionalSeries,
        d: usize,
        delta: f64,
        kernel: KernelSpec,
    ) -> Result<Self> {
        let n = series.len();
        let bandwidth = kernel.bandwidth_for(n)?;
        let c_full = spectrum::partial_covariance(series, n)?;
        if !(c_full.trace() > f64::MIN_POSITIVE) {
            return Err(Error::DegenerateSpectrum(
                "all curves coincide after centering; the covariance operator is zero".into(),
            ));
        }
        let eig = spectrum::eigen_decompose(&c_full, d)?;
        let mut warnings = eig.warnings.clone();
        if let Some(w) = spectrum::spectral_gap_warning(&spectrum::full_spectrum(&c_full), d) {
            log::warn!("{w}");
            warnings.push(w);
        }
        let process = spectrum::eigenvalue_process(series, d, delta)?;
        let scores = longrun::scores(series, &eig, &c_full)?;
        let sigma = longrun::lrv_matrix(&scores, &kernel)?;
        let trace = TraceStatistics::compute(series, kernel)?;

        Ok(Self {
            n,
            d,
            delta,
            kernel,
            bandwidth,
            process,
            sigma,
            trace,
            warnings,
        })
    }

    pub fn process(&self) -> &EigenProcess {
        &self.process
    }

    pub fn trace(&self) -> &TraceStatistics {
        &self.trace
    }

    /// `Σ̂_d`.
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn builder(&self) -> ReportBuilder {
        ReportBuilder {
            n: self.n,
            d: self.d,
            delta: self.delta,
            kernel: self.kernel,
            bandwidth: self.bandwidth,
        }
    }

    /// `(J_n, break index)`.
    pub fn joint_statistic(&self) -> Result<(f64, usize)> {
        let inv = longrun::invert_lrv(&self.sigma)?;
        let kappa = cusum_vector(&self.process);
        let (row, stat) = argmax(
            kappa
                .row_iter()
                .map(|r| quadratic_form(&r.transpose(), &inv)),
        );
        Ok((stat, self.process.start() + row))
    }

    /// `(I_{j,n}, break index)` for one-based `j`.
    pub fn individual_statistic(&self, j: usize) -> Result<(f64, usize)> {
        if j == 0 || j > self.d {
            return Err(Error::invalid_argument(format!("component {j} outside 1..{}", self.d)));
        }
        let var = self.sigma[(j - 1, j - 1)];
        let lam = self.process.full()[j - 1];
        if !(var > 0.0 && var > 1e-12 * lam * lam) {
            return Err(Error::SingularLrv { smallest: var });
        }
        let sd = var.sqrt();
        let kappa = cusum_vector(&self.process);
        let (row, stat) = argmax(kappa.column(j - 1).iter().map(|v| v.abs() / sd));
        Ok((stat, self.process.start() + row))
    }

    pub fn joint(&self, reference: &ReferenceSample, alpha: f64) -> Result<TestReport> {
        check_family(reference, LimitFamily::Joint { d: self.d }, self.delta)?;
        let (stat, k) = self.joint_statistic()?;
        self.builder()
            .build(TestKind::Joint, stat, k, reference, alpha, self.warnings.clone())
    }

    pub fn individual(&self, j: usize, reference: &ReferenceSample, alpha: f64) -> Result<TestReport> {
        check_family(reference, LimitFamily::Individual, self.delta)?;
        let (stat, k) = self.individual_statistic(j)?;
        let mut diagnostics = vec![SQRT_N_NOTE.to_string()];
        diagnostics.extend(self.warnings.iter().cloned());
        self.builder()
            .build(TestKind::Individual(j), stat, k, reference, alpha, diagnostics)
    }

    pub fn trace_test(&self, reference: &ReferenceSample, alpha: f64) -> Result<TestReport> {
        self.trace.test(reference, alpha)
    }
}

/// Joint test for a break in the `d` leading eigenvalues.
pub fn joint_test(
    series: &FunctionalSeries,
    d: usize,
    delta: f64,
    kernel: KernelSpec,
    reference: &ReferenceSample,
    alpha: f64,
) -> Result<TestReport> {
    BreakStatistics::compute(series, d, delta, kernel)?.joint(reference, alpha)
}

/// Test for a break in the `j`-th eigenvalue (one-based), with the
/// long-run variance taken from the `d`-dimensional score estimate.
pub fn individual_test(
    series: &FunctionalSeries,
    j: usize,
    d: usize,
    delta: f64,
    kernel: KernelSpec,
    reference: &ReferenceSample,
    alpha: f64,
) -> Result<TestReport> {
    BreakStatistics::compute(series, d, delta, kernel)?.individual(j, reference, alpha)
}

/// Test for a break in the trace of the covariance operator.
pub fn trace_test(
    series: &FunctionalSeries,
    kernel: KernelSpec,
    reference: &ReferenceSample,
    alpha: f64,
) -> Result<TestReport> {
    TraceStatistics::compute(series, kernel)?.test(reference, alpha)
}

/// Quadratic form helper, exposed for diagnostics.
pub fn quadratic_form(v: &DVector<f64>, inv: &DMatrix<f64>) -> f64 {
    v.dot(&(inv * v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::fourier_basis;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn random_series(n: usize, dim: usize, seed: u64) -> FunctionalSeries {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, dim, |_, l| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z / (l as f64 + 1.0)
        });
        FunctionalSeries::new(m, fourier_basis(dim).unwrap()).unwrap()
    }

    fn small_ref(family: LimitFamily, delta: f64) -> ReferenceSample {
        ReferenceSample::simulate(LimitDistSpec {
            family,
            delta,
            grid_points: 200,
            replications: 2000,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn cusum_two_point() {
        let s = FunctionalSeries::new(
            DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            fourier_basis(1).unwrap(),
        )
        .unwrap();
        let p = spectrum::eigenvalue_process(&s, 1, 0.5).unwrap();
        let k = cusum_vector(&p);
        assert_abs_diff_eq!(k[(0, 0)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k[(1, 0)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn cusum_endpoint_vanishes() {
        let s = random_series(50, 5, 1);
        let p = spectrum::eigenvalue_process(&s, 3, 0.1).unwrap();
        let k = cusum_vector(&p);
        assert!(k.row(k.nrows() - 1).iter().all(|v| *v == 0.0));
        let t = trace_cusum(&spectrum::trace_process(&s));
        assert_eq!(*t.last().unwrap(), 0.0);
    }

    #[test]
    fn quantile_p_value_consistency() {
        let r = small_ref(LimitFamily::Trace, 0.0);
        for alpha in [0.01, 0.05, 0.1, 0.5] {
            let q = r.quantile(alpha).unwrap();
            for &x in r.sorted().iter().step_by(37).chain([q, q + 1e-12, q - 1e-12].iter()) {
                assert_eq!(x > q, r.p_value(x) < alpha, "alpha {alpha}, x {x}");
            }
        }
        assert_eq!(r.p_value(0.0), 1.0);
        assert_eq!(r.p_value(1e9), 0.0);
        assert!(r.quantile(0.0).is_err());
        assert!(r.quantile(1.0).is_err());
    }

    #[test]
    fn spec_validation() {
        let base = LimitDistSpec::trace();
        assert!(base.grid(99).validate().is_err());
        assert!(base.reps(999).validate().is_err());
        assert!(LimitDistSpec::joint(0, 0.1).validate().is_err());
        assert!(LimitDistSpec::individual(1.0).validate().is_err());
        assert!(LimitDistSpec::individual(0.0).validate().is_ok());
    }

    #[test]
    fn simulation_is_deterministic() {
        let spec = LimitDistSpec::joint(2, 0.1).grid(100).reps(1000).seed(9);
        let a = ReferenceSample::simulate(spec).unwrap();
        let b = ReferenceSample::simulate(spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn narrower_window_is_stochastically_smaller() {
        let wide = small_ref(LimitFamily::Individual, 0.0);
        let narrow = small_ref(LimitFamily::Individual, 0.1);
        for (a, b) in narrow.sorted().iter().zip(wide.sorted()) {
            assert!(a <= b);
        }
    }

    #[test]
    fn cache_roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let spec = LimitDistSpec::individual(0.1).grid(100).reps(1000).seed(3);
        let (a, hit) = ReferenceSample::load_or_simulate(spec, dir.path()).unwrap();
        assert!(!hit);
        let (b, hit) = ReferenceSample::load_or_simulate(spec, dir.path()).unwrap();
        assert!(hit);
        assert_eq!(a, b);

        let path = dir.path().join(spec.cache_file_name());
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replacen('\n', "\nnot-a-number\n", 2)).unwrap();
        let (c, hit) = ReferenceSample::load_or_simulate(spec, dir.path()).unwrap();
        assert!(!hit);
        assert_eq!(a, c);
    }

    #[test]
    fn degenerate_and_mismatch_errors() {
        let s = FunctionalSeries::new(DMatrix::from_element(30, 3, 1.0), fourier_basis(3).unwrap())
            .unwrap();
        let j = small_ref(LimitFamily::Joint { d: 2 }, 0.1);
        assert!(matches!(
            joint_test(&s, 2, 0.1, KernelSpec::default(), &j, 0.05),
            Err(Error::DegenerateSpectrum(_))
        ));
        let m = small_ref(LimitFamily::Trace, 0.0);
        assert!(matches!(
            trace_test(&s, KernelSpec::default(), &m, 0.05),
            Err(Error::DegenerateSpectrum(_))
        ));

        let s = random_series(60, 4, 2);
        assert!(matches!(
            joint_test(&s, 3, 0.1, KernelSpec::default(), &j, 0.05),
            Err(Error::InvalidArgument(_))
        ));
        let i = small_ref(LimitFamily::Individual, 0.2);
        assert!(individual_test(&s, 1, 2, 0.1, KernelSpec::default(), &i, 0.05).is_err());
        let i = small_ref(LimitFamily::Individual, 0.1);
        assert!(individual_test(&s, 3, 2, 0.1, KernelSpec::default(), &i, 0.05).is_err());
    }

    #[test]
    fn reports_are_consistent() {
        let s = random_series(80, 5, 6);
        let stats = BreakStatistics::compute(&s, 2, 0.1, KernelSpec::default()).unwrap();
        let j = small_ref(LimitFamily::Joint { d: 2 }, 0.1);
        let i = small_ref(LimitFamily::Individual, 0.1);
        let m = small_ref(LimitFamily::Trace, 0.0);
        let reports = [
            stats.joint(&j, 0.05).unwrap(),
            stats.individual(1, &i, 0.05).unwrap(),
            stats.individual(2, &i, 0.05).unwrap(),
            stats.trace_test(&m, 0.05).unwrap(),
        ];
        for r in &reports {
            assert!(r.statistic >= 0.0);
            assert_eq!(r.reject, r.p_value < r.alpha);
            assert!(r.break_index >= 1 && r.break_index < 80);
            assert_eq!(r.bandwidth, 4.0);
        }
        assert!(reports[0].break_index >= 8);
        assert_eq!(reports[3].test.to_string(), "M");
        assert_eq!("I2".parse::<TestKind>().unwrap(), TestKind::Individual(2));
        assert!("I0".parse::<TestKind>().is_err());

        let standalone = trace_test(&s, KernelSpec::default(), &m, 0.05).unwrap();
        assert_eq!(standalone.statistic, reports[3].statistic);
        assert_eq!(standalone.break_index, reports[3].break_index);
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax([1.0, 3.0, 3.0, 2.0].into_iter()), (1, 3.0));
    }
}
