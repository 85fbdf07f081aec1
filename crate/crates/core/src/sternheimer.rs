//! Projected preconditioned CG for `Q(H − ε_n)Q x = b` on the unoccupied subspace.

use num_complex::Complex64;

use crate::error::{check_len, DysonError, Result};
use crate::groundstate::GroundState;
use crate::pwbasis::norm2c;

/// Shift floor used by the kinetic preconditioner.
pub const PRECONDITIONER_SHIFT_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SternheimerResult {
    pub solution: Vec<Complex64>,
    pub final_residual_norm: f64,
    pub cg_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SternheimerOptions {
    /// Defaults to `10 N_b` when `None`.
    pub max_iter: Option<usize>,
    /// Return the last iterate instead of failing when `max_iter` is hit.
    pub allow_unconverged: bool,
}

impl Default for SternheimerOptions {
    fn default() -> Self {
        Self {
            max_iter: None,
            allow_unconverged: false,
        }
    }
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// `ψ − Φ(Φᴴψ)`.
pub fn project_out_occupied(phi: &[Vec<Complex64>], psi: &[Complex64]) -> Vec<Complex64> {
    let mut out = psi.to_vec();
    project_in_place(phi, &mut out);
    out
}

fn project_in_place(phi: &[Vec<Complex64>], psi: &mut [Complex64]) {
    let coeffs: Vec<Complex64> = phi.iter().map(|p| inner(p, psi)).collect();
    for (p, c) in phi.iter().zip(coeffs) {
        for (x, y) in psi.iter_mut().zip(p) {
            *x -= c * y;
        }
    }
}

/// Solves the Sternheimer equation for occupied band `n` with zero initial guess.
/// Always performs at least one CG iteration; each iteration applies the
/// Hamiltonian once.
pub fn solve_sternheimer(
    gs: &GroundState,
    n: usize,
    rhs: &[Complex64],
    tol: f64,
    options: &SternheimerOptions,
) -> Result<SternheimerResult> {
    let grids = gs.grids();
    check_len("sternheimer rhs", grids.n_b(), rhs.len())?;
    if n >= gs.n_occ() {
        return Err(DysonError::InvalidInput(format!("band {n} is not occupied (N_occ = {})", gs.n_occ())));
    }
    if !(tol > 0.0) {
        return Err(DysonError::InvalidInput(format!("Sternheimer tolerance must be positive, got {tol}")));
    }
    let phi = gs.phi();
    let eps_n = gs.eps()[n];
    let shift = eps_n.max(PRECONDITIONER_SHIFT_FLOOR);
    let inv_diag: Vec<f64> = grids.kinetic().iter().map(|k| 1.0 / (k + shift)).collect();
    let max_iter = options.max_iter.unwrap_or(10 * grids.n_b()).max(1);
    let ham = gs.hamiltonian();

    let apply_a = |p: &[Complex64]| -> Result<Vec<Complex64>> {
        let mut hp = ham.apply(p)?;
        for (h, x) in hp.iter_mut().zip(p) {
            *h -= eps_n * x;
        }
        project_in_place(phi, &mut hp);
        Ok(hp)
    };
    let precondition = |r: &[Complex64]| -> Vec<Complex64> {
        let mut z: Vec<Complex64> = r.iter().zip(&inv_diag).map(|(x, d)| x * d).collect();
        project_in_place(phi, &mut z);
        z
    };

    let mut x = vec![Complex64::new(0.0, 0.0); grids.n_b()];
    let mut r = project_out_occupied(phi, rhs);
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = inner(&r, &z).re;
    let mut res = norm2c(&r);
    let mut iterations = 0;
    loop {
        let ap = apply_a(&p)?;
        iterations += 1;
        let pap = inner(&p, &ap).re;
        if !(pap > 0.0) || rz == 0.0 {
            // zero right-hand side or exact solution reached
            break;
        }
        let alpha = rz / pap;
        for ((xi, ri), (pi, api)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
            *xi += alpha * pi;
            *ri -= alpha * api;
        }
        project_in_place(phi, &mut x);
        project_in_place(phi, &mut r);
        res = norm2c(&r);
        if res <= tol || iterations >= max_iter {
            break;
        }
        z = precondition(&r);
        let rz_new = inner(&r, &z).re;
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
        project_in_place(phi, &mut p);
    }
    let converged = res <= tol;
    if !converged && !options.allow_unconverged {
        return Err(DysonError::SternheimerNotConverged {
            iterations,
            residual: res,
            tolerance: tol,
        });
    }
    Ok(SternheimerResult {
        solution: x,
        final_residual_norm: res,
        cg_iterations: iterations,
        converged,
    })
}
