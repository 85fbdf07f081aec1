//! Independent-particle susceptibility `χ₀`, the dielectric operator
//! `E = I − χ₀K` and the a-posteriori bound on its inexact application.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, DysonError, Result};
use crate::groundstate::GroundState;
use crate::kernels::Kernel;
use crate::pwbasis::{norm2, FourierGrids};
use crate::sternheimer::{project_out_occupied, solve_sternheimer, SternheimerOptions};

/// Relative threshold under which two eigenvalues are treated as degenerate.
pub const DEGENERACY_THRESHOLD: f64 = 1e-8;
/// Imaginary parts of diagonal matrix elements above this (relative) are reported.
const IMAG_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenResponse {
    pub delta_eps: Vec<f64>,
    pub delta_eps_f: f64,
    pub delta_f: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Chi0Stats {
    pub cg_iterations: Vec<usize>,
    pub cg_residuals: Vec<f64>,
    pub ham_applications: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chi0Output {
    pub delta_rho: Vec<f64>,
    pub stats: Chi0Stats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DielectricApplication {
    pub output: Vec<f64>,
    pub kv_norm: f64,
    pub cg_iterations_per_band: Vec<usize>,
    pub cg_residuals_per_band: Vec<f64>,
    pub tolerances_used: Vec<f64>,
    pub ham_applications: u64,
}

/// `F(dv ⊙ F⁻¹φ_n)` for every occupied band.
fn potential_products(gs: &GroundState, dv: &[f64]) -> Result<Vec<Vec<Complex64>>> {
    let grids = gs.grids();
    check_len("perturbing potential", grids.n_g(), dv.len())?;
    gs.phi_real()
        .par_iter()
        .map(|psi| {
            let prod: Vec<Complex64> = psi.iter().zip(dv).map(|(p, v)| p * v).collect();
            grids.to_fourier(&prod)
        })
        .collect()
}

/// `M[m][n] = ⟨φ_m, F(dv ⊙ F⁻¹φ_n)⟩` over occupied bands.
fn coupling_matrix(gs: &GroundState, products: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    gs.phi()
        .iter()
        .map(|pm| {
            products
                .iter()
                .map(|g| pm.iter().zip(g).map(|(a, b)| a.conj() * b).sum())
                .collect()
        })
        .collect()
}

fn eigen_response_from(gs: &GroundState, m: &[Vec<Complex64>]) -> Result<EigenResponse> {
    let n_occ = gs.n_occ();
    let mut delta_eps = Vec::with_capacity(n_occ);
    for (n, row) in m.iter().enumerate() {
        let d = row[n];
        if d.im.abs() > IMAG_TOLERANCE * d.norm().max(1.0) {
            return Err(DysonError::Invariant(format!(
                "diagonal matrix element of band {n} has imaginary part {}",
                d.im
            )));
        }
        delta_eps.push(d.re);
    }
    let fprime = gs.occ_derivative();
    let sum_fp: f64 = fprime.iter().sum();
    let delta_eps_f = if sum_fp.abs() > 1e-14 * n_occ as f64 {
        fprime.iter().zip(&delta_eps).map(|(f, e)| f * e).sum::<f64>() / sum_fp
    } else {
        0.0
    };
    let delta_f = fprime.iter().zip(&delta_eps).map(|(f, e)| f * (e - delta_eps_f)).collect();
    Ok(EigenResponse {
        delta_eps,
        delta_eps_f,
        delta_f,
    })
}

/// First-order eigenvalue shifts, Fermi-level shift and occupation changes.
pub fn delta_eigen_occupations(gs: &GroundState, dv: &[f64]) -> Result<EigenResponse> {
    let products = potential_products(gs, dv)?;
    eigen_response_from(gs, &coupling_matrix(gs, &products))
}

/// `(f_n − f_m)/(ε_n − ε_m)`, or `f'_n` for (near-)degenerate pairs.
pub fn occupation_ratio(gs: &GroundState, fprime: &[f64], n: usize, m: usize) -> f64 {
    let (en, em) = (gs.eps()[n], gs.eps()[m]);
    if (en - em).abs() <= DEGENERACY_THRESHOLD * en.abs().max(1.0) {
        fprime[n]
    } else {
        (gs.occ()[n] - gs.occ()[m]) / (en - em)
    }
}

/// Weight of `φ_m` in `δφᴾ_n` per unit matrix element. The pair weights satisfy
/// `f_n w_nm + f_m w_mn = (f_n − f_m)/(ε_n − ε_m)`; the diagonal is carried by `δf_n`.
fn pair_weight(gs: &GroundState, fprime: &[f64], n: usize, m: usize) -> f64 {
    if n == m {
        return 0.0;
    }
    let (fnn, fm) = (gs.occ()[n], gs.occ()[m]);
    fnn / (fnn * fnn + fm * fm) * occupation_ratio(gs, fprime, n, m)
}

fn delta_phi_from(gs: &GroundState, m: &[Vec<Complex64>], fprime: &[f64], n: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); gs.grids().n_b()];
    for (k, phi_k) in gs.phi().iter().enumerate() {
        let w = pair_weight(gs, fprime, n, k);
        if w == 0.0 {
            continue;
        }
        let c = m[k][n] * w;
        for (o, p) in out.iter_mut().zip(phi_k) {
            *o += c * p;
        }
    }
    out
}

/// Occupied-subspace part of the orbital responses, one column per occupied band.
pub fn delta_phi_occupied(gs: &GroundState, dv: &[f64]) -> Result<Vec<Vec<Complex64>>> {
    let products = potential_products(gs, dv)?;
    let m = coupling_matrix(gs, &products);
    let fprime = gs.occ_derivative();
    Ok((0..gs.n_occ()).map(|n| delta_phi_from(gs, &m, &fprime, n)).collect())
}

/// `χ₀ dv` with per-band Sternheimer tolerances. Band contributions are
/// computed in parallel and summed in band order.
pub fn apply_chi0(
    gs: &GroundState,
    dv: &[f64],
    tolerances: &[f64],
    options: &SternheimerOptions,
) -> Result<Chi0Output> {
    let n_occ = gs.n_occ();
    check_len("sternheimer tolerances", n_occ, tolerances.len())?;
    if let Some(t) = tolerances.iter().find(|t| !(**t > 0.0)) {
        return Err(DysonError::InvalidInput(format!("Sternheimer tolerance must be positive, got {t}")));
    }
    let grids = gs.grids();
    let products = potential_products(gs, dv)?;
    let m = coupling_matrix(gs, &products);
    let er = eigen_response_from(gs, &m)?;
    let fprime = gs.occ_derivative();

    let bands: Vec<(Vec<f64>, usize, f64)> = (0..n_occ)
        .into_par_iter()
        .map(|n| -> Result<(Vec<f64>, usize, f64)> {
            let mut rhs = project_out_occupied(gs.phi(), &products[n]);
            rhs.iter_mut().for_each(|x| *x = -*x);
            let st = solve_sternheimer(gs, n, &rhs, tolerances[n], options)?;
            let mut dphi = delta_phi_from(gs, &m, &fprime, n);
            for (d, q) in dphi.iter_mut().zip(&st.solution) {
                *d += q;
            }
            let dphi_real = grids.to_real(&dphi)?;
            let psi = &gs.phi_real()[n];
            let f = gs.occ()[n];
            let df = er.delta_f[n];
            let contrib = psi
                .iter()
                .zip(&dphi_real)
                .map(|(p, d)| 2.0 * f * (p.conj() * d).re + df * p.norm_sqr())
                .collect();
            Ok((contrib, st.cg_iterations, st.final_residual_norm))
        })
        .collect::<Result<_>>()?;

    let mut delta_rho = vec![0.0; grids.n_g()];
    let mut stats = Chi0Stats::default();
    for (contrib, iters, res) in bands {
        delta_rho.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b);
        stats.cg_iterations.push(iters);
        stats.cg_residuals.push(res);
        stats.ham_applications += iters as u64;
    }
    Ok(Chi0Output { delta_rho, stats })
}

/// `E v = v − ‖Kv‖ χ₀(Kv/‖Kv‖)` with the tolerances chosen once `‖Kv‖` is known.
pub fn apply_dielectric_with<S>(
    gs: &GroundState,
    kernel: &Kernel,
    v: &[f64],
    select: S,
    options: &SternheimerOptions,
) -> Result<DielectricApplication>
where
    S: FnOnce(f64) -> Result<Vec<f64>>,
{
    let grids = gs.grids();
    let u = kernel.apply(grids, v)?;
    let kv_norm = norm2(&u);
    if kv_norm == 0.0 {
        return Ok(DielectricApplication {
            output: v.to_vec(),
            kv_norm,
            cg_iterations_per_band: vec![0; gs.n_occ()],
            cg_residuals_per_band: vec![0.0; gs.n_occ()],
            tolerances_used: vec![],
            ham_applications: 0,
        });
    }
    let tolerances = select(kv_norm)?;
    let unit: Vec<f64> = u.iter().map(|x| x / kv_norm).collect();
    let chi = apply_chi0(gs, &unit, &tolerances, options)?;
    let output = v.iter().zip(&chi.delta_rho).map(|(a, b)| a - kv_norm * b).collect();
    Ok(DielectricApplication {
        output,
        kv_norm,
        cg_iterations_per_band: chi.stats.cg_iterations,
        cg_residuals_per_band: chi.stats.cg_residuals,
        tolerances_used: tolerances,
        ham_applications: chi.stats.ham_applications,
    })
}

pub fn apply_dielectric(
    gs: &GroundState,
    kernel: &Kernel,
    v: &[f64],
    tolerances: &[f64],
) -> Result<DielectricApplication> {
    apply_dielectric_with(gs, kernel, v, |_| Ok(tolerances.to_vec()), &SternheimerOptions::default())
}

/// `max_r ‖row_r(F⁻¹Φ)‖₂`.
pub fn orbital_row_norm(grids: &FourierGrids, phi: &[Vec<Complex64>]) -> Result<f64> {
    row_norm_with(grids, phi, |c| c.norm_sqr())
}

/// Row norm of the real part `Re(F⁻¹Φ)`.
pub fn orbital_row_norm_real(grids: &FourierGrids, phi: &[Vec<Complex64>]) -> Result<f64> {
    row_norm_with(grids, phi, |c| c.re * c.re)
}

fn row_norm_with(grids: &FourierGrids, phi: &[Vec<Complex64>], sq: impl Fn(&Complex64) -> f64) -> Result<f64> {
    let mut acc = vec![0.0; grids.n_g()];
    for p in phi {
        for (a, c) in acc.iter_mut().zip(&grids.to_real(p)?) {
            *a += sq(c);
        }
    }
    Ok(acc.into_iter().fold(0.0, f64::max).sqrt())
}

/// Upper bound on `‖(E − Ẽ)v‖` for the given per-band CG tolerances.
pub fn dielectric_error_bound(gs: &GroundState, kv_norm: f64, row_norm: f64, tolerances: &[f64]) -> Result<f64> {
    check_len("error bound tolerances", gs.n_occ(), tolerances.len())?;
    let grids = gs.grids();
    let gap_ref = gs.eps_gap_ref();
    let worst = gs
        .occ()
        .iter()
        .zip(gs.eps())
        .zip(tolerances)
        .map(|((f, e), t)| f / (gap_ref - e) * t)
        .fold(0.0, f64::max);
    let prefactor = 2.0 * kv_norm * row_norm * ((grids.n_g() * gs.n_occ()) as f64).sqrt() / grids.volume().sqrt();
    Ok(prefactor * worst)
}
