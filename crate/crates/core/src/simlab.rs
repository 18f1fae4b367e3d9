//! Benchmark data-generating processes and size/power experiments.
//!
//! Curves are generated directly as Fourier coefficient vectors. The
//! coefficients of the innovation `ζ_i` are independent `N(0, σ_ℓ²)` with
//! either fast (`σ_ℓ = 3^{−ℓ}`) or slow (`σ_ℓ = 1/ℓ`) decay. Dependent
//! curves follow the FAR(1) recursion `x_i = κ Ψ₀ x_{i−1} + ζ_i`, where
//! `Ψ₀` has independent Gaussian entries with standard deviation
//! `σ_a σ_b`, rescaled to unit operator norm.
//!
//! A break at `k* = ⌊τn⌋` switches every scale from `σ` to `b ∘ σ` for the
//! curves after `k*`, both in the innovations and in the entry scales of
//! `Ψ₀`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::basis::{fourier_basis, FunctionalSeries};
use crate::breaktest::{BreakStatistics, LimitDistSpec, ReferenceSample, TestKind};
use crate::error::{Error, Result};
use crate::longrun::KernelSpec;
use crate::seed::{derive_seed, stream_rng};

pub const DEFAULT_DIM: usize = 21;
pub const DEFAULT_KAPPA: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decay {
    Fast,
    Slow,
}

impl Decay {
    /// Per-coordinate innovation standard deviations.
    pub fn scales(self, dim: usize) -> DVector<f64> {
        DVector::from_iterator(
            dim,
            (1..=dim).map(|l| match self {
                Decay::Fast => 3f64.powi(-(l as i32)),
                Decay::Slow => 1.0 / l as f64,
            }),
        )
    }
}

impl fmt::Display for Decay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decay::Fast => "fast",
            Decay::Slow => "slow",
        })
    }
}

impl FromStr for Decay {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fast" => Ok(Decay::Fast),
            "slow" => Ok(Decay::Slow),
            other => Err(Error::invalid_argument(format!("unknown decay '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dependence {
    Iid,
    Far1 { kappa: f64 },
}

impl fmt::Display for Dependence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dependence::Iid => f.write_str("iid"),
            Dependence::Far1 { .. } => f.write_str("far1"),
        }
    }
}

/// How `Ψ₀` is rescaled to unit norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PsiNorm {
    /// Largest singular value.
    #[default]
    Spectral,
    Frobenius,
}

impl FromStr for PsiNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spectral" | "operator" => Ok(PsiNorm::Spectral),
            "frobenius" => Ok(PsiNorm::Frobenius),
            other => Err(Error::invalid_argument(format!("unknown operator norm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakSpec {
    pub tau: f64,
    /// Post-break multipliers of the coordinate scales, length `D`.
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    pub n: usize,
    pub dim: usize,
    pub decay: Decay,
    pub dependence: Dependence,
    pub brk: Option<BreakSpec>,
    pub seed: u64,
    pub psi_norm: PsiNorm,
}

impl DgpSpec {
    pub fn new(n: usize, decay: Decay, dependence: Dependence, seed: u64) -> Self {
        Self {
            n,
            dim: DEFAULT_DIM,
            decay,
            dependence,
            brk: None,
            seed,
            psi_norm: PsiNorm::Spectral,
        }
    }

    pub fn with_break(mut self, tau: f64, b: Vec<f64>) -> Self {
        self.brk = Some(BreakSpec { tau, b });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid_argument("sample size must be at least 2"));
        }
        if self.dim == 0 {
            return Err(Error::invalid_argument("basis dimension must be at least 1"));
        }
        if let Dependence::Far1 { kappa } = self.dependence {
            if !(kappa > -1.0 && kappa < 1.0) {
                return Err(Error::invalid_argument(format!("kappa = {kappa} outside (-1, 1)")));
            }
        }
        if let Some(brk) = &self.brk {
            if !(brk.tau > 0.0 && brk.tau < 1.0) {
                return Err(Error::invalid_argument(format!("tau = {} outside (0, 1)", brk.tau)));
            }
            if brk.b.len() != self.dim {
                return Err(Error::invalid_argument(format!(
                    "break multiplier has length {}, expected {}",
                    brk.b.len(),
                    self.dim
                )));
            }
            if brk.b.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::invalid_argument("break multipliers must be positive"));
            }
        }
        Ok(())
    }

    /// Zero-based index of the first post-break curve (`n` when no break).
    pub fn break_row(&self) -> usize {
        self.brk
            .as_ref()
            .map_or(self.n, |b| (b.tau * self.n as f64).floor() as usize)
    }
}

fn unit_norm_operator(entries: &DMatrix<f64>, norm: PsiNorm) -> DMatrix<f64> {
    let scale = match norm {
        PsiNorm::Spectral => entries.singular_values().max(),
        PsiNorm::Frobenius => entries.norm(),
    };
    entries / scale
}

fn draw_innovation<R: Rng>(rng: &mut R, scales: &DVector<f64>) -> DVector<f64> {
    scales.map(|s| {
        let z: f64 = StandardNormal.sample(rng);
        s * z
    })
}

/// Simulate one functional series from `spec`.
pub fn gen_series(spec: &DgpSpec) -> Result<FunctionalSeries> {
    spec.validate()?;
    let dim = spec.dim;
    let pre = spec.decay.scales(dim);
    let post = match &spec.brk {
        Some(b) => pre.component_mul(&DVector::from_column_slice(&b.b)),
        None => pre.clone(),
    };
    let switch = spec.break_row();
    let mut rng = stream_rng(spec.seed, &[]);
    let mut coeffs = DMatrix::zeros(spec.n, dim);

    match spec.dependence {
        Dependence::Iid => {
            for i in 0..spec.n {
                let scales = if i < switch { &pre } else { &post };
                coeffs.row_mut(i).copy_from(&draw_innovation(&mut rng, scales).transpose());
            }
        }
        Dependence::Far1 { kappa } => {
            // one Gaussian draw shared by both regimes; only the entry scales differ
            let raw = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
            let operator = |s: &DVector<f64>| {
                let entries = raw.component_mul(&(s * s.transpose()));
                unit_norm_operator(&entries, spec.psi_norm) * kappa
            };
            let psi_pre = operator(&pre);
            let psi_post = operator(&post);

            let mut state = DVector::zeros(dim);
            for _ in 0..spec.n.div_ceil(2) {
                state = &psi_pre * &state + draw_innovation(&mut rng, &pre);
            }
            for i in 0..spec.n {
                let (psi, scales) = if i < switch {
                    (&psi_pre, &pre)
                } else {
                    (&psi_post, &post)
                };
                state = psi * &state + draw_innovation(&mut rng, scales);
                coeffs.row_mut(i).copy_from(&state.transpose());
            }
        }
    }
    FunctionalSeries::new(coeffs, fourier_basis(dim)?)
}

/// Which coordinates carry the break in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setting {
    Null,
    /// Break in coordinate 1, 2 or 3 alone.
    Single(usize),
    /// Common break in coordinates 1 to 3.
    Leading3,
}

impl Setting {
    /// Break multiplier vector of length `dim` for magnitude `b`.
    pub fn multipliers(self, b: f64, dim: usize) -> Vec<f64> {
        let mut out = vec![1.0; dim];
        match self {
            Setting::Null => {}
            Setting::Single(l) => {
                if l >= 1 && l <= dim {
                    out[l - 1] = b;
                }
            }
            Setting::Leading3 => out.iter_mut().take(3).for_each(|v| *v = b),
        }
        out
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::Null => f.write_str("null"),
            Setting::Single(l) => write!(f, "{l}"),
            Setting::Leading3 => f.write_str("4"),
        }
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "null" | "null-only" | "0" => Ok(Setting::Null),
            "1" => Ok(Setting::Single(1)),
            "2" => Ok(Setting::Single(2)),
            "3" => Ok(Setting::Single(3)),
            "4" => Ok(Setting::Leading3),
            other => Err(Error::invalid_argument(format!("unknown setting '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub setting: Setting,
    pub decay: Decay,
    pub dependence: Dependence,
    pub n_list: Vec<usize>,
    pub b_grid: Vec<f64>,
    pub tau: f64,
    pub reps: usize,
    pub delta: f64,
    pub alpha: f64,
    pub seed: u64,
    /// Number of eigenvalues in the joint test; individual tests run for
    /// `j = 1..=d`.
    pub d: usize,
    pub dim: usize,
    pub kernel: KernelSpec,
    pub psi_norm: PsiNorm,
    pub mc_grid: usize,
    pub mc_reps: usize,
    pub mc_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            setting: Setting::Null,
            decay: Decay::Slow,
            dependence: Dependence::Iid,
            n_list: vec![100, 200, 500],
            b_grid: vec![1.0, 1.5, 2.0, 3.0, 5.0],
            tau: 0.5,
            reps: 1000,
            delta: 0.1,
            alpha: 0.05,
            seed: 1,
            d: 3,
            dim: DEFAULT_DIM,
            kernel: KernelSpec::default(),
            psi_norm: PsiNorm::Spectral,
            mc_grid: crate::breaktest::DEFAULT_GRID_POINTS,
            mc_reps: crate::breaktest::DEFAULT_REPLICATIONS,
            mc_seed: 0x5eed,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 100 {
            return Err(Error::invalid_argument(format!(
                "experiments need at least 100 replications, got {}",
                self.reps
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid_argument(format!("delta = {} outside (0, 1)", self.delta)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid_argument(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        if self.d == 0 || self.d > self.dim {
            return Err(Error::invalid_argument(format!("d = {} outside 1..{}", self.d, self.dim)));
        }
        Ok(())
    }

    /// `(n, b)` pairs; the null setting has a single `b = 1` cell per `n`.
    pub fn cells(&self) -> Vec<(usize, f64)> {
        let bs: Vec<f64> = match self.setting {
            Setting::Null => vec![1.0],
            _ => self.b_grid.clone(),
        };
        self.n_list
            .iter()
            .flat_map(|&n| bs.iter().map(move |&b| (n, b)))
            .collect()
    }

    pub fn tests(&self) -> Vec<TestKind> {
        std::iter::once(TestKind::Joint)
            .chain((1..=self.d).map(TestKind::Individual))
            .chain(std::iter::once(TestKind::Trace))
            .collect()
    }

    fn dependence_key(&self) -> u64 {
        match self.dependence {
            Dependence::Iid => 0,
            Dependence::Far1 { kappa } => 1 ^ kappa.to_bits(),
        }
    }

    /// Seed of replication `rep` at sample size `n`. Break settings and
    /// magnitudes share the streams of the null design.
    pub fn series_seed(&self, n: usize, rep: usize) -> u64 {
        let decay = match self.decay {
            Decay::Fast => 0,
            Decay::Slow => 1,
        };
        derive_seed(self.seed, &[decay, self.dependence_key(), n as u64, rep as u64])
    }

    pub fn dgp(&self, n: usize, b: f64, rep: usize) -> DgpSpec {
        let mut spec = DgpSpec {
            n,
            dim: self.dim,
            decay: self.decay,
            dependence: self.dependence,
            brk: None,
            seed: self.series_seed(n, rep),
            psi_norm: self.psi_norm,
        };
        if self.setting != Setting::Null {
            spec.brk = Some(BreakSpec {
                tau: self.tau,
                b: self.setting.multipliers(b, self.dim),
            });
        }
        spec
    }
}

/// Reference samples for the joint, individual and trace limits.
#[derive(Debug, Clone)]
pub struct References {
    pub joint: ReferenceSample,
    pub individual: ReferenceSample,
    pub trace: ReferenceSample,
}

impl References {
    pub fn specs(cfg: &ExperimentConfig) -> [LimitDistSpec; 3] {
        let tune = |s: LimitDistSpec| s.grid(cfg.mc_grid).reps(cfg.mc_reps).seed(cfg.mc_seed);
        [
            tune(LimitDistSpec::joint(cfg.d, cfg.delta)),
            tune(LimitDistSpec::individual(cfg.delta)),
            tune(LimitDistSpec::trace()),
        ]
    }

    pub fn simulate(cfg: &ExperimentConfig) -> Result<Self> {
        let [j, i, m] = Self::specs(cfg);
        Ok(Self {
            joint: ReferenceSample::simulate(j)?,
            individual: ReferenceSample::simulate(i)?,
            trace: ReferenceSample::simulate(m)?,
        })
    }

    pub fn load_or_simulate(cfg: &ExperimentConfig, cache_dir: &std::path::Path) -> Result<Self> {
        let [j, i, m] = Self::specs(cfg);
        Ok(Self {
            joint: ReferenceSample::load_or_simulate(j, cache_dir)?.0,
            individual: ReferenceSample::load_or_simulate(i, cache_dir)?.0,
            trace: ReferenceSample::load_or_simulate(m, cache_dir)?.0,
        })
    }

    fn for_test(&self, test: TestKind) -> &ReferenceSample {
        match test {
            TestKind::Joint => &self.joint,
            TestKind::Individual(_) => &self.individual,
            TestKind::Trace => &self.trace,
        }
    }
}

/// Outcome of one test on one simulated series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub reject: bool,
    pub break_fraction: f64,
}

/// Run every test of `cfg` on one series. Failed tests give `None`.
pub fn evaluate(
    series: &FunctionalSeries,
    cfg: &ExperimentConfig,
    refs: &References,
) -> Vec<Option<Outcome>> {
    let tests = cfg.tests();
    let stats = match BreakStatistics::compute(series, cfg.d, cfg.delta, cfg.kernel) {
        Ok(s) => s,
        Err(e) => {
            log::debug!("replication failed: {e}");
            return vec![None; tests.len()];
        }
    };
    let n = series.len() as f64;
    tests
        .iter()
        .map(|&test| {
            let res = match test {
                TestKind::Joint => stats.joint_statistic(),
                TestKind::Individual(j) => stats.individual_statistic(j),
                TestKind::Trace => stats.trace().statistic(),
            };
            res.ok().map(|(stat, k)| Outcome {
                reject: refs.for_test(test).p_value(stat) < cfg.alpha,
                break_fraction: k as f64 / n,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub setting: Setting,
    pub decay: Decay,
    pub dependence: Dependence,
    pub n: usize,
    pub b: f64,
    /// `None` for the null setting.
    pub tau: Option<f64>,
    pub test: TestKind,
    pub rejection_rate: f64,
    pub median_break_fraction: f64,
    pub q1: f64,
    pub q3: f64,
    pub failures: usize,
}

pub const CSV_HEADER: &str =
    "setting,decay,dependence,n,b,tau,test,rejection_rate,median_break_fraction,q1,q3,failures";

fn fmt_opt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "NA".into()
    }
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.setting,
            self.decay,
            self.dependence,
            self.n,
            self.b,
            self.tau.map_or_else(|| "NA".to_string(), |t| t.to_string()),
            self.test,
            fmt_opt(self.rejection_rate),
            fmt_opt(self.median_break_fraction),
            fmt_opt(self.q1),
            fmt_opt(self.q3),
            self.failures
        )
    }
}

/// Render rows as CSV with [`CSV_HEADER`].
pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// Linear-interpolation sample quantile of sorted data.
pub fn sample_quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Outcomes of all replications of one `(n, b)` cell, indexed `[rep][test]`.
pub fn simulate_cell(
    cfg: &ExperimentConfig,
    refs: &References,
    n: usize,
    b: f64,
) -> Result<Vec<Vec<Option<Outcome>>>> {
    (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let series = gen_series(&cfg.dgp(n, b, rep))?;
            Ok(evaluate(&series, cfg, refs))
        })
        .collect()
}

fn summarize(
    cfg: &ExperimentConfig,
    n: usize,
    b: f64,
    outcomes: &[Vec<Option<Outcome>>],
) -> Vec<ResultRow> {
    cfg.tests()
        .into_iter()
        .enumerate()
        .map(|(t, test)| {
            let ok: Vec<Outcome> = outcomes.iter().filter_map(|rep| rep[t]).collect();
            let failures = outcomes.len() - ok.len();
            let rejections = ok.iter().filter(|o| o.reject).count();
            let mut fractions: Vec<f64> = ok.iter().map(|o| o.break_fraction).collect();
            fractions.sort_by(f64::total_cmp);
            let rate = if ok.is_empty() {
                f64::NAN
            } else {
                rejections as f64 / ok.len() as f64
            };
            ResultRow {
                setting: cfg.setting,
                decay: cfg.decay,
                dependence: cfg.dependence,
                n,
                b,
                tau: (cfg.setting != Setting::Null).then_some(cfg.tau),
                test,
                rejection_rate: rate,
                median_break_fraction: sample_quantile(&fractions, 0.5),
                q1: sample_quantile(&fractions, 0.25),
                q3: sample_quantile(&fractions, 0.75),
                failures,
            }
        })
        .collect()
}

/// Simulate every cell of `cfg` and summarize rejection rates and
/// break-date quartiles per test.
pub fn run_experiment(cfg: &ExperimentConfig, refs: &References) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (n, b) in cfg.cells() {
        let outcomes = simulate_cell(cfg, refs, n, b)?;
        rows.extend(summarize(cfg, n, b, &outcomes));
    }
    Ok(rows)
}
