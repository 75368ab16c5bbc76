//! Simulator and estimation toolkit for fluorescence-lifetime
//! Hong-Ou-Mandel (FL-HOM) sensing.
//!
//! A delay scan of two-detector coincidence counts around a HOM dip
//! carries the fluorescence lifetime in its asymmetric shape. This crate
//! models that dip, simulates realistic photon-counting experiments
//! against it, and recovers lifetimes (and derived viscosities) with
//! quantified uncertainty.
//!
//! Module map:
//!
//! * [`model`] — pure dip-shape mathematics: convolution kernels, the
//!   parametric dip model with analytic gradients, the visibility vs
//!   pulse-duration curve, and the coincidence SNR law.
//! * [`photonsim`] — Monte Carlo of the experiment, at count level
//!   (Poisson per delay point) and event level (per-pulse timestamp
//!   streams), plus the coincidence correlator and trace normalization.
//! * [`estimation`] — lifetime recovery: tail fit, Levenberg-Marquardt
//!   least squares, affine-invariant MCMC refinement, IRF estimation
//!   from reference-pulse autocorrelations, and precision-vs-time scans.
//! * [`rheology`] — power-law calibration between molecular-rotor
//!   lifetime and solvent viscosity, with propagated uncertainty.
//! * [`io`] — trace CSV, FLH1 timestamp binary, fit reports, posterior
//!   dumps, calibration files.
//! * [`config`] — flat key-value config files driving the `flhom` CLI.
//!
//! All model-level times are double-precision picoseconds; femtoseconds
//! and nanoseconds appear only at I/O boundaries.

pub mod config;
pub mod error;
pub mod estimation;
pub mod io;
pub mod model;
pub mod photonsim;
pub mod rheology;

pub use error::{Error, Result};
