//! Inexact GMRES for the density-response Dyson equation `(I − χ₀K) δρ = χ₀ δV₀`
//! with adaptively chosen Sternheimer tolerances, on a Γ-point plane-wave toy solid.
//!
//! Layering, bottom up:
//! - [`pwbasis`]: lattice, Fourier grids and normalised transforms.
//! - [`groundstate`]: Hamiltonian, dense diagonalisation, smearing, SCF.
//! - [`kernels`]: Hartree / LDA exchange kernel and the Kerker preconditioner.
//! - [`sternheimer`]: projected preconditioned CG.
//! - [`response`]: χ₀ and the dielectric operator with its error bound.
//! - [`igmres`]: restarted inexact GMRES over a budgeted operator.
//! - [`strategies`]: per-band CG tolerance selection.
//! - [`harness`]: configs, archives, experiments and reports.

pub mod error;
pub mod groundstate;
pub mod harness;
pub mod igmres;
pub mod kernels;
pub mod pwbasis;
pub mod response;
pub mod sternheimer;
pub mod strategies;

pub use error::{DysonError, Result};
