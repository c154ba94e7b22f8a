//! Dynamic PET reconstruction laboratory.
//!
//! The crate covers the full simulation-to-analysis loop for 2D dynamic
//! PET studies:
//!
//! * [`phantom`] — procedural phantoms, compartment-model time-activity
//!   curves, and ground-truth dynamic images.
//! * [`projector`] — an explicit sparse Radon forward model with exact
//!   adjoint, randoms simulation, and SNR-calibrated Poisson noise.
//! * [`recon`] — five reconstruction algorithms: frame-wise EM, EM-NMF,
//!   MAP-TV, a hybrid INR/EM method, and NINRF (non-negative implicit
//!   neural representation factorization).
//! * [`neural`] — the minimal differentiable-computation engine behind
//!   the INR-based reconstructors.
//! * [`analysis`] — PSNR/SSIM, TAC extraction, and Patlak kinetics.
//! * [`tensorfn`] — sampled tensor functions, unfolding ranks, and
//!   non-negative rank certificates used to check the low-rank theory
//!   numerically.

pub mod analysis;
pub mod error;
pub mod linalg;
pub mod neural;
pub mod phantom;
pub mod projector;
pub mod recon;
pub mod tensorfn;

pub use error::{Error, Result};
