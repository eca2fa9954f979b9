//! Simulation and signal-recovery toolkit for Brillouin optical time-domain
//! analysis (BOTDA) sensors.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! - [`brillouin`]: the pump-probe interaction model (complex detuning rate,
//!   transient gain envelope, per-meter impulse-response density).
//! - [`simulator`]: received gain traces and gain-spectrum maps over a probe
//!   frequency sweep, with seeded Gaussian measurement noise.
//! - [`dpp`]: differential pulse-width pair processing and the deconvolution
//!   kernels it induces.
//! - [`deconv`]: total-variation regularized deconvolution of time-domain
//!   traces (alternating-direction splitting with a banded direct solver).
//! - [`analysis`]: Lorentzian spectrum fitting, Brillouin frequency-shift
//!   profiles, SNR and degradation metrics, and the spatial-resolution /
//!   regularization search procedure.
//! - [`io`]: scenario configuration files, binary gain-map persistence, and
//!   ingestion of externally measured traces.

pub mod analysis;
mod banded;
pub mod brillouin;
pub mod deconv;
pub mod dpp;
pub mod error;
pub mod io;
pub mod simulator;
pub mod tv_prox;

pub use error::{Error, Result};
