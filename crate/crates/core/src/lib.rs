//! Exact and Monte Carlo analysis of Glauber dynamics for Ising models whose
//! interaction has a negative rank-one outlier,
//!
//! ```text
//! mu(x) ∝ exp(-(beta/n) <u,x>^2 + <x,Jx> + <h,x>),   x ∈ {-1,+1}^n.
//! ```
//!
//! * [`model`]: configurations, the measure and single-site heat-bath updates.
//! * [`exact`]: brute-force enumeration (partition function, moments, kernel
//!   spectrum, entropy contraction witnesses, conductance, TV mixing).
//! * [`approx`]: the mean-field fixed point and the rank-one covariance and
//!   correlation approximants, cavity identities and MLSI bound calculators.
//! * [`tilted`]: quadratically tilted moments of bounded sums and their
//!   Gaussian counterparts.
//! * [`ensembles`]: random graphs, disorder matrices, spectra and regime checks.
//! * [`dynamics`]: long Glauber runs and slow-mixing diagnostics on graphs.
//!
//! Heavy loops honour an [`Exec`] policy. With the default `parallel` feature
//! they run on rayon; results are merged in a fixed order so both policies
//! produce bit-identical output.

// `!(x >= a)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx;
pub mod dynamics;
pub mod ensembles;
pub mod error;
pub mod exact;
pub mod linalg;
pub mod model;
pub mod numeric;
pub mod par;
pub mod rng;
pub mod sample;
pub mod tilted;

pub use error::{Error, Result};
pub use model::{magnetization, IsingModel, SpinConfig};
pub use par::Exec;
