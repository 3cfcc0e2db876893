//! Constructions and Monte Carlo probes for eigenvector delocalization of
//! non-Hermitian random matrices with independent entries.
//!
//! The crate is organised bottom-up:
//!
//! - [`ensembles`]: entry distributions, seeded matrix sampling, truncation.
//! - [`linalg`]: SVD, eigenpairs, subspaces and distances, row
//!   orthonormalization, singular-value surgery.
//! - [`spectral_window`]: tail sums of decay sequences and window selection.
//! - [`test_projection`]: the coisometry whose kernel contains all but `l`
//!   designated columns of `A = G - zI`.
//! - [`distances`]: isotropic and anisotropic distance experiments.
//! - [`sv_probes`]: singular-value and concentration probes.
//! - [`deloc_experiments`]: delocalization scans, localization search,
//!   coefficient balancing, the spectral net and the end-to-end pipeline.
//! - [`calibration`]: the constants file and the pilot runs that fill it.

pub mod calibration;
pub mod deloc_experiments;
pub mod distances;
pub mod ensembles;
pub mod error;
pub mod linalg;
pub mod rng;
pub mod spectral_window;
pub mod stats;
pub mod sv_probes;
pub mod test_projection;

pub use error::{Error, Result};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Dense complex matrix used throughout the crate. Real ensembles are stored
/// with zero imaginary parts; routines detect this and take real fast paths.
pub type CMatrix = DMatrix<Complex64>;
/// Dense complex column vector.
pub type CVector = DVector<Complex64>;
