//! Command-line front end: `analyze`, `simulate` and `quantiles`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::basis::{center_and_segment_demean, fourier_basis, smooth_curves, FunctionalSeries};
use crate::breaktest::{
    cusum_vector, trace_cusum, BreakStatistics, LimitDistSpec, LimitFamily, ReferenceSample,
    TestReport, DEFAULT_GRID_POINTS, DEFAULT_REPLICATIONS,
};
use crate::error::{Error, Result};
use crate::longrun::{Bandwidth, KernelKind, KernelSpec};
use crate::simlab::{self, Decay, Dependence, ExperimentConfig, PsiNorm, References, Setting};
use crate::spectrum::{full_spectrum, segment_covariance, tve_dimension};

#[derive(Debug, Parser)]
#[command(name = "covbreak", version, about = "Break tests for the spectrum and trace of functional time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full pipeline on one data set and write a JSON report.
    Analyze(AnalyzeArgs),
    /// Run a size/power experiment described by a key=value config file.
    Simulate(SimulateArgs),
    /// Print (and cache) critical values of a limit distribution.
    Quantiles(QuantilesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum InputFormat {
    /// One curve per row, sampled on an equally spaced grid over [0, 1].
    Grid,
    /// One curve per row given by its basis coefficients.
    Coef,
}

/// Number of components: a fixed count or selection by explained variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DSelect {
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for DSelect {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(DSelect::Auto);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(DSelect::Fixed(k)),
            _ => Err(format!("expected 'auto' or a positive integer, got '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "grid")]
    pub format: InputFormat,
    #[arg(long, default_value_t = 21)]
    pub basis_dim: usize,
    /// Comma-separated indices after which the mean may change.
    #[arg(long, value_delimiter = ',')]
    pub mean_breaks: Vec<usize>,
    #[arg(long, default_value = "auto")]
    pub d: DSelect,
    /// Explained-variance threshold used when `--d auto`.
    #[arg(long, default_value_t = 0.85)]
    pub tve: f64,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value = "bartlett")]
    pub kernel: KernelKind,
    #[arg(long, default_value = "auto")]
    pub bandwidth: Bandwidth,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    pub mc_grid: usize,
    #[arg(long, default_value_t = DEFAULT_REPLICATIONS)]
    pub mc_reps: usize,
    #[arg(long, default_value_t = 0x5eed)]
    pub seed: u64,
    /// Directory for cached reference samples.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FamilyArg {
    J,
    I,
    M,
}

#[derive(Debug, Clone, Args)]
pub struct QuantilesArgs {
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.01")]
    pub alpha: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    pub mc_grid: usize,
    #[arg(long, default_value_t = DEFAULT_REPLICATIONS)]
    pub mc_reps: usize,
    #[arg(long, default_value_t = 0x5eed)]
    pub seed: u64,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

/// Process exit code for each error class. Usage errors reported by the
/// argument parser exit with 2.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => 3,
        Error::Config(_) => 4,
        Error::InvalidArgument(_) => 5,
        Error::InvalidData(_) => 6,
        Error::UnderdeterminedFit { .. } => 7,
        Error::DegenerateSpectrum(_) => 8,
        Error::SingularLrv { .. } => 9,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze(args) => cmd_analyze(&args).map(|_| ()),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Quantiles(args) => {
            let out = cmd_quantiles(&args)?;
            print!("{out}");
            Ok(())
        }
    }
}

/// Parse comma-separated numeric rows. A first row that does not parse is
/// taken as a header.
pub fn read_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if rows.is_empty() && lineno == 0 => {}
            Err(e) => {
                return Err(Error::invalid_data(format!("line {}: {e}", lineno + 1)));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::invalid_data("input contains no curves"));
    }
    Ok(rows)
}

pub fn load_series(path: &Path, format: InputFormat, dim: usize) -> Result<FunctionalSeries> {
    let rows = read_csv(&fs::read_to_string(path)?)?;
    let basis = fourier_basis(dim)?;
    match format {
        InputFormat::Grid => smooth_curves(&rows, &basis),
        InputFormat::Coef => {
            if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
                return Err(Error::invalid_data(format!(
                    "row {} has {} coefficients, expected {dim}",
                    i + 1,
                    r.len()
                )));
            }
            let flat: Vec<f64> = rows.concat();
            FunctionalSeries::new(DMatrix::from_row_slice(rows.len(), dim, &flat), basis)
        }
    }
}

/// One line of the pre/post-break eigenvalue table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakTableRow {
    pub j: usize,
    pub lambda_before: f64,
    pub lambda_after: f64,
    pub pve_before: f64,
    pub pve_after: f64,
    pub tve_before: f64,
    pub tve_after: f64,
    pub cumulative_before: f64,
    pub cumulative_after: f64,
}

/// Eigenvalues of the segments `1..=k` and `k+1..=n`, each with its own
/// mean, with proportions and cumulative shares of the segment trace.
pub fn break_table(series: &FunctionalSeries, k: usize, rows: usize) -> Result<Vec<BreakTableRow>> {
    let n = series.len();
    if k < 2 || n - k < 2 {
        return Err(Error::invalid_argument(format!(
            "break index {k} leaves a segment with fewer than 2 curves"
        )));
    }
    let before = full_spectrum(&segment_covariance(&series.segment(0, k)?));
    let after = full_spectrum(&segment_covariance(&series.segment(k, n)?));
    let (tr_b, tr_a): (f64, f64) = (before.iter().sum(), after.iter().sum());
    let share = |v: f64, tr: f64| if tr > 0.0 { v / tr } else { f64::NAN };
    let (mut cb, mut ca) = (0.0, 0.0);
    Ok((0..rows.min(before.len()))
        .map(|j| {
            cb += before[j];
            ca += after[j];
            BreakTableRow {
                j: j + 1,
                lambda_before: before[j],
                lambda_after: after[j],
                pve_before: share(before[j], tr_b),
                pve_after: share(after[j], tr_a),
                tve_before: share(cb, tr_b),
                tve_after: share(ca, tr_a),
                cumulative_before: cb,
                cumulative_after: ca,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct CacheStatus {
    pub family: String,
    pub hit: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub input: String,
    pub format: String,
    pub n: usize,
    pub basis_dim: usize,
    pub mean_breaks: Vec<usize>,
    pub d: usize,
    pub d_selection: String,
    pub tve_threshold: Option<f64>,
    pub delta: f64,
    pub kernel: String,
    pub bandwidth: f64,
    pub alpha: f64,
    pub mc_grid: usize,
    pub mc_reps: usize,
    pub seed: u64,
    pub full_spectrum: Vec<f64>,
    pub tests: Vec<TestReport>,
    /// Segment split used for the pre/post table (the joint test's break).
    pub table_break_index: usize,
    pub break_table: Vec<BreakTableRow>,
    pub warnings: Vec<String>,
    pub cache: Vec<CacheStatus>,
    pub eigen_cusum_csv: String,
    pub trace_cusum_csv: String,
    pub break_table_csv: String,
}

fn reference(spec: LimitDistSpec, cache: Option<&Path>) -> Result<(ReferenceSample, bool)> {
    match cache {
        Some(dir) => ReferenceSample::load_or_simulate(spec, dir),
        None => Ok((ReferenceSample::simulate(spec)?, false)),
    }
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    out.with_file_name(format!("{stem}_{suffix}.csv"))
}

fn eigen_cusum_csv(stats: &BreakStatistics) -> String {
    let process = stats.process();
    let kappa = cusum_vector(process);
    let d = process.d();
    let mut s = String::from("k,x");
    (1..=d).for_each(|j| write!(s, ",lambda_{j}").unwrap());
    (1..=d).for_each(|j| write!(s, ",kappa_{j}").unwrap());
    s.push('\n');
    let n = process.n() as f64;
    for (r, k) in process.grid().enumerate() {
        write!(s, "{k},{}", k as f64 / n).unwrap();
        process.values().row(r).iter().for_each(|v| write!(s, ",{v}").unwrap());
        kappa.row(r).iter().for_each(|v| write!(s, ",{v}").unwrap());
        s.push('\n');
    }
    s
}

fn trace_cusum_csv(stats: &BreakStatistics) -> String {
    let trace = stats.trace().process();
    let n = trace.n() as f64;
    let mut s = String::from("k,x,trace,cusum\n");
    for (i, (t, c)) in trace.values().iter().zip(trace_cusum(trace)).enumerate() {
        writeln!(s, "{},{},{t},{c}", i + 1, (i + 1) as f64 / n).unwrap();
    }
    s
}

fn break_table_csv(rows: &[BreakTableRow]) -> String {
    let mut s = String::from("j,lambda_b,lambda_a,pve_b,pve_a,tve_b,tve_a,tr_b,tr_a\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.j,
            r.lambda_before,
            r.lambda_after,
            r.pve_before,
            r.pve_after,
            r.tve_before,
            r.tve_after,
            r.cumulative_before,
            r.cumulative_after
        )
        .unwrap();
    }
    s
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<AnalysisReport> {
    if !(args.delta > 0.0 && args.delta < 1.0) {
        return Err(Error::invalid_argument(format!("delta = {} outside (0, 1)", args.delta)));
    }
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Error::invalid_argument(format!("alpha = {} outside (0, 1)", args.alpha)));
    }
    let raw = load_series(&args.input, args.format, args.basis_dim)?;
    let series = center_and_segment_demean(&raw, &args.mean_breaks)?;
    let spectrum = full_spectrum(&segment_covariance(&series));

    let (d, d_selection, tve_threshold) = match args.d {
        DSelect::Fixed(k) => (k, "fixed".to_string(), None),
        DSelect::Auto => (tve_dimension(&spectrum, args.tve)?, "tve".to_string(), Some(args.tve)),
    };
    if d > args.basis_dim {
        return Err(Error::invalid_argument(format!(
            "d = {d} exceeds the basis dimension {}",
            args.basis_dim
        )));
    }
    log::info!("n = {}, D = {}, d = {d}", series.len(), args.basis_dim);

    let kernel = KernelSpec::new(args.kernel, args.bandwidth);
    let stats = BreakStatistics::compute(&series, d, args.delta, kernel)?;

    let tune = |s: LimitDistSpec| s.grid(args.mc_grid).reps(args.mc_reps).seed(args.seed);
    let cache = args.cache_dir.as_deref();
    let (joint_ref, j_hit) = reference(tune(LimitDistSpec::joint(d, args.delta)), cache)?;
    let (ind_ref, i_hit) = reference(tune(LimitDistSpec::individual(args.delta)), cache)?;
    let (trace_ref, m_hit) = reference(tune(LimitDistSpec::trace()), cache)?;

    let mut tests = vec![stats.joint(&joint_ref, args.alpha)?];
    for j in 1..=d {
        tests.push(stats.individual(j, &ind_ref, args.alpha)?);
    }
    tests.push(stats.trace_test(&trace_ref, args.alpha)?);

    let mut warnings = stats.warnings().to_vec();
    let k_hat = tests[0].break_index;
    let table = match break_table(&series, k_hat, d) {
        Ok(t) => t,
        Err(e) => {
            warnings.push(format!("pre/post-break table skipped: {e}"));
            Vec::new()
        }
    };

    let eigen_path = sidecar(&args.out, "eigen_cusum");
    let trace_path = sidecar(&args.out, "trace_cusum");
    let table_path = sidecar(&args.out, "break_table");
    fs::write(&eigen_path, eigen_cusum_csv(&stats))?;
    fs::write(&trace_path, trace_cusum_csv(&stats))?;
    fs::write(&table_path, break_table_csv(&table))?;

    let bandwidth = kernel.bandwidth_for(series.len())?;
    let report = AnalysisReport {
        input: args.input.display().to_string(),
        format: format!("{:?}", args.format).to_lowercase(),
        n: series.len(),
        basis_dim: args.basis_dim,
        mean_breaks: args.mean_breaks.clone(),
        d,
        d_selection,
        tve_threshold,
        delta: args.delta,
        kernel: args.kernel.to_string(),
        bandwidth,
        alpha: args.alpha,
        mc_grid: args.mc_grid,
        mc_reps: args.mc_reps,
        seed: args.seed,
        full_spectrum: spectrum,
        tests,
        table_break_index: k_hat,
        break_table: table,
        warnings,
        cache: [(LimitFamily::Joint { d }, j_hit), (LimitFamily::Individual, i_hit), (LimitFamily::Trace, m_hit)]
            .into_iter()
            .map(|(f, hit)| CacheStatus {
                family: f.to_string(),
                hit,
            })
            .collect(),
        eigen_cusum_csv: eigen_path.display().to_string(),
        trace_cusum_csv: trace_path.display().to_string(),
        break_table_csv: table_path.display().to_string(),
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Config(format!("cannot serialize report: {e}")))?;
    fs::write(&args.out, json + "\n")?;
    Ok(report)
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse '{s}'")))
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

/// Parse a flat `key = value` experiment description. `#` starts a
/// comment; unknown keys are rejected.
pub fn parse_experiment_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut kappa = simlab::DEFAULT_KAPPA;
    let mut far = false;
    let mut kernel = KernelSpec::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim().trim_matches('"'));
        let wrap = |e: Error| Error::Config(format!("{key}: {e}"));
        match key {
            "setting" => cfg.setting = value.parse::<Setting>().map_err(wrap)?,
            "decay" => cfg.decay = value.parse::<Decay>().map_err(wrap)?,
            "dependence" => match value.to_ascii_lowercase().as_str() {
                "iid" => far = false,
                "far1" | "far" => far = true,
                other => return Err(Error::Config(format!("dependence: unknown value '{other}'"))),
            },
            "kappa" => kappa = parse_one(key, value)?,
            "n" | "n_list" => cfg.n_list = parse_list(key, value)?,
            "b" | "b_grid" => cfg.b_grid = parse_list(key, value)?,
            "tau" => cfg.tau = parse_one(key, value)?,
            "reps" => cfg.reps = parse_one(key, value)?,
            "delta" => cfg.delta = parse_one(key, value)?,
            "alpha" => cfg.alpha = parse_one(key, value)?,
            "seed" => cfg.seed = parse_one(key, value)?,
            "d" => cfg.d = parse_one(key, value)?,
            "dim" | "basis_dim" => cfg.dim = parse_one(key, value)?,
            "kernel" => kernel.kind = value.parse().map_err(wrap)?,
            "bandwidth" => kernel.bandwidth = value.parse().map_err(wrap)?,
            "psi_norm" => cfg.psi_norm = value.parse::<PsiNorm>().map_err(wrap)?,
            "mc_grid" => cfg.mc_grid = parse_one(key, value)?,
            "mc_reps" => cfg.mc_reps = parse_one(key, value)?,
            "mc_seed" => cfg.mc_seed = parse_one(key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
    }
    cfg.dependence = if far {
        Dependence::Far1 { kappa }
    } else {
        Dependence::Iid
    };
    cfg.kernel = kernel;
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(cfg)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = parse_experiment_config(&fs::read_to_string(&args.config)?)?;
    let rows = if cfg.cells().is_empty() {
        Vec::new()
    } else {
        let refs = match &args.cache_dir {
            Some(dir) => References::load_or_simulate(&cfg, dir)?,
            None => References::simulate(&cfg)?,
        };
        simlab::run_experiment(&cfg, &refs)?
    };
    fs::write(&args.out, simlab::to_csv(&rows))?;
    Ok(())
}

/// Critical values for each level in `args.alpha`, as printable text.
pub fn cmd_quantiles(args: &QuantilesArgs) -> Result<String> {
    let spec = match args.family {
        FamilyArg::J => LimitDistSpec::joint(args.d, args.delta),
        FamilyArg::I => LimitDistSpec::individual(args.delta),
        FamilyArg::M => LimitDistSpec::trace(),
    }
    .grid(args.mc_grid)
    .reps(args.mc_reps)
    .seed(args.seed);
    let (sample, hit) = reference(spec, args.cache_dir.as_deref())?;
    let spec = sample.spec();
    let mut out = String::new();
    writeln!(
        out,
        "# family={} d={} delta={} grid={} reps={} seed={} cache={}",
        spec.family,
        spec.d(),
        spec.delta,
        spec.grid_points,
        spec.replications,
        spec.seed,
        if args.cache_dir.is_none() {
            "off"
        } else if hit {
            "hit"
        } else {
            "miss"
        }
    )
    .unwrap();
    writeln!(out, "alpha,quantile").unwrap();
    for &a in &args.alpha {
        writeln!(out, "{a},{:.6}", sample.quantile(a)?).unwrap();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_is_optional() {
        assert_eq!(read_csv("a,b\n1,2\n3,4\n").unwrap(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(read_csv("1,2\n\n3,4").unwrap().len(), 2);
        assert!(matches!(read_csv("1,2\nx,4"), Err(Error::InvalidData(_))));
        assert!(matches!(read_csv("h1,h2\n"), Err(Error::InvalidData(_))));
    }

    #[test]
    fn d_selection_parses() {
        assert_eq!("auto".parse::<DSelect>().unwrap(), DSelect::Auto);
        assert_eq!("4".parse::<DSelect>().unwrap(), DSelect::Fixed(4));
        assert!("0".parse::<DSelect>().is_err());
    }

    #[test]
    fn exit_codes_are_distinct() {
        let errs = [
            Error::Io(std::io::Error::other("x")),
            Error::Config(String::new()),
            Error::InvalidArgument(String::new()),
            Error::InvalidData(String::new()),
            Error::UnderdeterminedFit { grid: 1, dim: 2 },
            Error::DegenerateSpectrum(String::new()),
            Error::SingularLrv { smallest: 0.0 },
        ];
        let mut codes: Vec<i32> = errs.iter().map(exit_code).collect();
        codes.push(0);
        codes.push(2);
        let len = codes.len();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), len);
    }

    #[test]
    fn experiment_config_parses() {
        let cfg = parse_experiment_config(
            "# size study\nsetting = null\ndecay = fast\ndependence = far1\nkappa = 0.5\n\
             n = 100, 200\nreps = 200\nkernel = parzen\nbandwidth = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.decay, Decay::Fast);
        assert_eq!(cfg.dependence, Dependence::Far1 { kappa: 0.5 });
        assert_eq!(cfg.n_list, vec![100, 200]);
        assert_eq!(cfg.kernel.kind, KernelKind::Parzen);
        assert!(matches!(parse_experiment_config("foo = 1"), Err(Error::Config(_))));
        assert!(matches!(parse_experiment_config("reps = 10"), Err(Error::Config(_))));
        assert!(matches!(parse_experiment_config("reps"), Err(Error::Config(_))));
    }

    #[test]
    fn empty_cell_list_is_allowed() {
        let cfg = parse_experiment_config("n =\n").unwrap();
        assert!(cfg.cells().is_empty());
        assert_eq!(simlab::to_csv(&[]), format!("{}\n", simlab::CSV_HEADER));
    }
}
