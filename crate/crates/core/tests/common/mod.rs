#![allow(dead_code)]

use inexact_dyson::groundstate::GroundState;
use inexact_dyson::kernels::Kernel;
use inexact_dyson::pwbasis::norm2;
use inexact_dyson::response::{apply_chi0, apply_dielectric};
use inexact_dyson::sternheimer::SternheimerOptions;
use nalgebra::{DMatrix, DVector};

pub const TIGHT: f64 = 1e-14;

pub fn tight(gs: &GroundState) -> Vec<f64> {
    vec![TIGHT; gs.n_occ()]
}

fn assemble(n: usize, mut column: impl FnMut(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        for (i, x) in column(&e).into_iter().enumerate() {
            m[(i, j)] = x;
        }
    }
    m
}

pub fn dense_chi0(gs: &GroundState) -> DMatrix<f64> {
    let tol = tight(gs);
    assemble(gs.grids().n_g(), |e| {
        apply_chi0(gs, e, &tol, &SternheimerOptions::default()).unwrap().delta_rho
    })
}

pub fn dense_dielectric(gs: &GroundState, kernel: &Kernel) -> DMatrix<f64> {
    let tol = tight(gs);
    assemble(gs.grids().n_g(), |e| apply_dielectric(gs, kernel, e, &tol).unwrap().output)
}

pub fn matvec(a: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (a * DVector::from_column_slice(v)).iter().copied().collect()
}

pub fn residual(a: &DMatrix<f64>, x: &[f64], b: &[f64]) -> f64 {
    let ax = matvec(a, x);
    norm2(&b.iter().zip(&ax).map(|(p, q)| p - q).collect::<Vec<_>>())
}

/// Orbital values `ψ_n(r) = Ω^{-1/2} Σ_G c_G e^{iG·r}` by direct summation.
pub fn orbitals_on_grid(gs: &GroundState) -> Vec<Vec<(f64, f64)>> {
    let grids = gs.grids();
    let lattice = grids.lattice();
    let gvecs: Vec<[f64; 3]> = grids.g_sphere().iter().map(|idx| lattice.g_vector(*idx)).collect();
    let points = grids.real_space_points();
    let scale = 1.0 / grids.volume().sqrt();
    gs.phi()
        .iter()
        .map(|c| {
            points
                .iter()
                .map(|r| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (g, coef) in gvecs.iter().zip(c) {
                        let phase = g[0] * r[0] + g[1] * r[1] + g[2] * r[2];
                        let (s, co) = phase.sin_cos();
                        re += coef.re * co - coef.im * s;
                        im += coef.re * s + coef.im * co;
                    }
                    (re * scale, im * scale)
                })
                .collect()
        })
        .collect()
}
