//! Toy-solid model, ground state and the SCF that produces it.

mod hamiltonian;
mod scf;
mod smearing;

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DysonError, Result};
use crate::pwbasis::{FourierGrids, Lattice, Vec3};

pub use hamiltonian::{diagonalize_dense, HamCounter, Hamiltonian};
pub use scf::{
    compute_density, external_potential, external_potential_derivative, hartree_potential, kohn_sham_map,
    local_potential, run_scf, ScfOptions,
};
pub use smearing::{fermi_and_occupations, Smearing};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Xc {
    #[default]
    None,
    LdaX,
}

/// One periodic Gaussian well `A exp(−|r − c|² / 2σ²)`, centre in fractional coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianWell {
    pub center: Vec3,
    pub amplitude: f64,
    pub width: f64,
}

fn default_occupation_threshold() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub lattice: Lattice,
    pub e_cut: f64,
    pub n_electrons: usize,
    pub temperature: f64,
    #[serde(default)]
    pub smearing: Smearing,
    #[serde(default = "default_occupation_threshold")]
    pub occupation_threshold: f64,
    #[serde(default)]
    pub xc: Xc,
    #[serde(default)]
    pub gaussians: Vec<GaussianWell>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DysonError::InvalidInput(m));
        if self.n_electrons == 0 || self.n_electrons % 2 != 0 {
            return bad(format!("n_electrons must be even and positive, got {}", self.n_electrons));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.occupation_threshold > 0.0 && self.occupation_threshold < 2.0) {
            return bad(format!("occupation threshold must lie in (0, 2), got {}", self.occupation_threshold));
        }
        if !(self.e_cut > 0.0 && self.e_cut.is_finite()) {
            return bad(format!("e_cut must be positive, got {}", self.e_cut));
        }
        for (i, g) in self.gaussians.iter().enumerate() {
            if !(g.width > 0.0 && g.width.is_finite()) || !g.amplitude.is_finite() || g.center.iter().any(|c| !c.is_finite()) {
                return bad(format!("gaussian {i} has invalid parameters"));
            }
        }
        Ok(())
    }

    pub fn build_grids(&self) -> Result<FourierGrids> {
        FourierGrids::new(self.lattice.clone(), self.e_cut)
    }
}

/// Number of unoccupied states kept beyond `N_occ`.
pub fn n_extra_states(n_occ: usize) -> usize {
    3.max((0.1 * n_occ as f64).ceil() as usize)
}

/// Converged (or loaded) ground state. Immutable; shared read-only by response solves.
#[derive(Debug, Clone)]
pub struct GroundState {
    model: ModelSpec,
    ham: Hamiltonian,
    orbitals: Vec<Vec<Complex64>>,
    orbitals_real: Vec<Vec<Complex64>>,
    eps: Vec<f64>,
    occ: Vec<f64>,
    fermi_level: f64,
    rho: Vec<f64>,
    rho_input: Vec<f64>,
    scf_residual: f64,
    scf_iterations: usize,
}

/// Raw parts of a ground state, as stored in an archive.
#[derive(Debug, Clone)]
pub struct GroundStateParts {
    pub model: ModelSpec,
    pub v_local: Vec<f64>,
    pub orbitals: Vec<Vec<Complex64>>,
    pub eps: Vec<f64>,
    pub occ: Vec<f64>,
    pub fermi_level: f64,
    pub rho: Vec<f64>,
    pub rho_input: Vec<f64>,
    pub scf_residual: f64,
    pub scf_iterations: usize,
}

impl GroundState {
    pub fn from_parts(grids: Arc<FourierGrids>, parts: GroundStateParts) -> Result<Self> {
        let n_b = grids.n_b();
        let n_occ = parts.occ.len();
        if parts.orbitals.len() != parts.eps.len() || n_occ == 0 || n_occ >= parts.eps.len() {
            return Err(DysonError::Invariant(format!(
                "inconsistent state counts: {} orbitals, {} eigenvalues, {} occupations",
                parts.orbitals.len(),
                parts.eps.len(),
                n_occ
            )));
        }
        for o in &parts.orbitals {
            crate::error::check_len("ground state orbital", n_b, o.len())?;
        }
        crate::error::check_len("ground state density", grids.n_g(), parts.rho.len())?;
        crate::error::check_len("ground state input density", grids.n_g(), parts.rho_input.len())?;
        let ham = Hamiltonian::new(grids.clone(), parts.v_local)?;
        let orbitals_real = parts.orbitals[..n_occ]
            .iter()
            .map(|o| grids.to_real(o))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model: parts.model,
            ham,
            orbitals: parts.orbitals,
            orbitals_real,
            eps: parts.eps,
            occ: parts.occ,
            fermi_level: parts.fermi_level,
            rho: parts.rho,
            rho_input: parts.rho_input,
            scf_residual: parts.scf_residual,
            scf_iterations: parts.scf_iterations,
        })
    }

    pub fn to_parts(&self) -> GroundStateParts {
        GroundStateParts {
            model: self.model.clone(),
            v_local: self.ham.v_local().to_vec(),
            orbitals: self.orbitals.clone(),
            eps: self.eps.clone(),
            occ: self.occ.clone(),
            fermi_level: self.fermi_level,
            rho: self.rho.clone(),
            rho_input: self.rho_input.clone(),
            scf_residual: self.scf_residual,
            scf_iterations: self.scf_iterations,
        }
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn grids(&self) -> &Arc<FourierGrids> {
        self.ham.grids()
    }

    pub fn hamiltonian(&self) -> &Hamiltonian {
        &self.ham
    }

    pub fn counter(&self) -> &HamCounter {
        self.ham.counter()
    }

    pub fn n_occ(&self) -> usize {
        self.occ.len()
    }

    /// Occupied orbitals `φ_1 … φ_{N_occ}`.
    pub fn phi(&self) -> &[Vec<Complex64>] {
        &self.orbitals[..self.n_occ()]
    }

    /// All retained orbitals, occupied followed by the extra unoccupied ones.
    pub fn orbitals(&self) -> &[Vec<Complex64>] {
        &self.orbitals
    }

    /// `F⁻¹φ_n` for occupied orbitals.
    pub fn phi_real(&self) -> &[Vec<Complex64>] {
        &self.orbitals_real
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn occ(&self) -> &[f64] {
        &self.occ
    }

    pub fn fermi_level(&self) -> f64 {
        self.fermi_level
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn rho_input(&self) -> &[f64] {
        &self.rho_input
    }

    pub fn scf_residual(&self) -> f64 {
        self.scf_residual
    }

    pub fn scf_iterations(&self) -> usize {
        self.scf_iterations
    }

    /// `ε_{N_occ+1}`.
    pub fn eps_gap_ref(&self) -> f64 {
        self.eps[self.n_occ()]
    }

    /// `f'_n = (1/T) f'((ε_n − ε_F)/T)` for occupied bands.
    pub fn occ_derivative(&self) -> Vec<f64> {
        let t = self.model.temperature;
        self.eps[..self.n_occ()]
            .iter()
            .map(|&e| self.model.smearing.derivative((e - self.fermi_level) / t) / t)
            .collect()
    }

    /// Checks the stored-state invariants; the first violation is reported.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(DysonError::Invariant(m));
        let phi = self.phi();
        for (i, a) in phi.iter().enumerate() {
            for (j, b) in phi.iter().enumerate().skip(i) {
                let ov: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (ov - expected).norm() > 1e-10 {
                    return fail(format!("orbitals {i},{j} not orthonormal (overlap {ov})"));
                }
            }
        }
        let n = self.model.n_electrons as f64;
        let total: f64 = self.occ.iter().sum();
        if (total - n).abs() > 1e-10 {
            return fail(format!("occupations sum to {total}, expected {n}"));
        }
        if let Some(min) = self.rho.iter().cloned().reduce(f64::min) {
            if min < -1e-12 {
                return fail(format!("negative density {min}"));
            }
        }
        let grids = self.grids();
        let integral = self.rho.iter().sum::<f64>() * grids.volume() / grids.n_g() as f64;
        if (integral - n).abs() > 1e-8 * n {
            return fail(format!("density integrates to {integral}, expected {n}"));
        }
        let n_occ = self.n_occ();
        if self.eps[n_occ] <= self.eps[n_occ - 1] {
            return fail(format!(
                "no gap above the occupied states: ε_(N_occ+1) = {} ≤ ε_(N_occ) = {}",
                self.eps[n_occ],
                self.eps[n_occ - 1]
            ));
        }
        Ok(())
    }
}
