//! Detection, testing and dating of structural breaks in the leading
//! eigenvalues and the trace of the covariance operator of a functional
//! time series.
//!
//! Curves are carried as coefficient vectors in an orthonormal Fourier
//! basis ([`basis`]). Partial-sample covariance operators and their
//! eigenvalue and trace processes live in [`spectrum`]; kernel long-run
//! covariance estimation of the score vectors in [`longrun`]; the CUSUM
//! statistics, Brownian-bridge reference distributions and break-date
//! estimators in [`breaktest`]. [`simlab`] generates the iid and FAR(1)
//! benchmark processes and runs size/power experiments, and [`cli`] holds
//! the command-line front end.

pub mod basis;
pub mod breaktest;
pub mod cli;
pub mod error;
pub mod longrun;
pub mod seed;
pub mod simlab;
pub mod spectrum;

pub use basis::{BasisKind, BasisSystem, FunctionalSeries};
pub use breaktest::{LimitDistSpec, LimitFamily, ReferenceSample, TestKind, TestReport};
pub use error::{Error, Result};
pub use longrun::{KernelKind, KernelSpec, ScoreMatrix};
pub use spectrum::{CovarianceOperator, EigenProcess, EigenSystem, TraceProcess};
