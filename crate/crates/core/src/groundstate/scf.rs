use std::f64::consts::PI;
use std::sync::Arc;

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    diagonalize_dense, fermi_and_occupations, n_extra_states, GaussianWell, GroundState, GroundStateParts,
    Hamiltonian, ModelSpec, Xc,
};
use crate::error::{check_len, DysonError, Result};
use crate::kernels::Kerker;
use crate::pwbasis::{norm2, FourierGrids, Lattice, Vec3};

/// Gaussian tails beyond this many widths are dropped (`e^{-32} ≈ 1e-14`).
const GAUSSIAN_CUTOFF_WIDTHS: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScfOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    /// Kerker mixing parameter; `None` for plain damped mixing.
    pub kerker_alpha: Option<f64>,
    /// Anderson history length; 0 keeps plain damped mixing.
    #[serde(default)]
    pub anderson_depth: usize,
}

impl Default for ScfOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            damping: 0.8,
            kerker_alpha: None,
            anderson_depth: 0,
        }
    }
}

/// `ρ(r) = Σ f_n |(F⁻¹φ_n)(r)|²`.
pub fn compute_density(grids: &FourierGrids, phi: &[Vec<Complex64>], occ: &[f64]) -> Result<Vec<f64>> {
    check_len("compute_density occupations", phi.len(), occ.len())?;
    let mut rho = vec![0.0; grids.n_g()];
    for (p, &f) in phi.iter().zip(occ) {
        let real = grids.to_real(p)?;
        for (r, c) in rho.iter_mut().zip(&real) {
            *r += f * c.norm_sqr();
        }
    }
    Ok(rho)
}

/// Zero-mean periodic solution of `−ΔV = 4πρ`.
pub fn hartree_potential(grids: &FourierGrids, rho: &[f64]) -> Result<Vec<f64>> {
    grids.apply_multiplier(rho, |g2| if g2 > 0.0 { 4.0 * PI / g2 } else { 0.0 })
}

fn lda_exchange(rho: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let c = (3.0 / PI).cbrt();
    rho.iter().map(move |&r| -c * r.max(0.0).cbrt())
}

/// Lattice-periodic images of the displacement `r − c` that lie within `cutoff`.
fn images(lattice: &Lattice, r: &Vec3, center_frac: &Vec3, cutoff: f64) -> Vec<Vec3> {
    let a = lattice.vectors();
    let b = lattice.reciprocal();
    let dot = |x: &Vec3, y: &Vec3| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
    // fractional displacement, wrapped to [−½, ½)
    let frac: [f64; 3] = std::array::from_fn(|d| {
        let f = dot(r, &b[d]) / (2.0 * PI) - center_frac[d];
        f - (f + 0.5).floor()
    });
    let reach: [i64; 3] = std::array::from_fn(|d| {
        (cutoff * dot(&b[d], &b[d]).sqrt() / (2.0 * PI)).ceil() as i64 + 1
    });
    let mut out = Vec::new();
    for n1 in -reach[0]..=reach[0] {
        for n2 in -reach[1]..=reach[1] {
            for n3 in -reach[2]..=reach[2] {
                let s = [frac[0] + n1 as f64, frac[1] + n2 as f64, frac[2] + n3 as f64];
                let d: Vec3 = std::array::from_fn(|k| s[0] * a[0][k] + s[1] * a[1][k] + s[2] * a[2][k]);
                if dot(&d, &d) <= cutoff * cutoff {
                    out.push(d);
                }
            }
        }
    }
    out
}

fn gaussian_value(lattice: &Lattice, g: &GaussianWell, r: &Vec3) -> f64 {
    let cutoff = GAUSSIAN_CUTOFF_WIDTHS * g.width;
    let s2 = 2.0 * g.width * g.width;
    images(lattice, r, &g.center, cutoff)
        .iter()
        .map(|d| g.amplitude * (-(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) / s2).exp())
        .sum()
}

/// `V_ext(r) = Σ_j A_j Σ_R exp(−|r − c_j − R|² / 2σ_j²)` on the real-space grid.
pub fn external_potential(grids: &FourierGrids, gaussians: &[GaussianWell]) -> Vec<f64> {
    let lattice = grids.lattice();
    grids
        .real_space_points()
        .iter()
        .map(|r| gaussians.iter().map(|g| gaussian_value(lattice, g, r)).sum())
        .collect()
}

/// Derivative of one lattice-summed Gaussian with respect to its Cartesian
/// centre, contracted with `direction`.
pub fn external_potential_derivative(grids: &FourierGrids, g: &GaussianWell, direction: &Vec3) -> Vec<f64> {
    let lattice = grids.lattice();
    let cutoff = GAUSSIAN_CUTOFF_WIDTHS * g.width;
    let w2 = g.width * g.width;
    grids
        .real_space_points()
        .iter()
        .map(|r| {
            images(lattice, r, &g.center, cutoff)
                .iter()
                .map(|d| {
                    let e = (-(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) / (2.0 * w2)).exp();
                    g.amplitude * e * (d[0] * direction[0] + d[1] * direction[1] + d[2] * direction[2]) / w2
                })
                .sum()
        })
        .collect()
}

/// `V_ext + V_H[ρ] (+ V_x[ρ])`.
pub fn local_potential(model: &ModelSpec, grids: &FourierGrids, v_ext: &[f64], rho: &[f64]) -> Result<Vec<f64>> {
    let mut v = hartree_potential(grids, rho)?;
    for (x, e) in v.iter_mut().zip(v_ext) {
        *x += e;
    }
    if model.xc == Xc::LdaX {
        for (x, vx) in v.iter_mut().zip(lda_exchange(rho)) {
            *x += vx;
        }
    }
    Ok(v)
}

pub(crate) struct KsOutput {
    pub ham: Hamiltonian,
    pub eps: Vec<f64>,
    pub orbitals: Vec<Vec<Complex64>>,
    pub occ: Vec<f64>,
    pub fermi_level: f64,
    pub rho: Vec<f64>,
}

/// One application of the Kohn-Sham map: potential, diagonalisation,
/// occupations and output density.
pub(crate) fn ks_step(model: &ModelSpec, grids: &Arc<FourierGrids>, v_local: Vec<f64>) -> Result<KsOutput> {
    let ham = Hamiltonian::new(grids.clone(), v_local)?;
    let n_b = grids.n_b();
    let (eps_all, phi_all) = diagonalize_dense(&ham, n_b)?;
    let t = model.temperature;
    let n = model.n_electrons;
    let (ef_all, occ_all) = fermi_and_occupations(&eps_all, n, t, model.smearing)?;
    let n_occ = occ_all
        .iter()
        .rposition(|&f| f > model.occupation_threshold)
        .map(|i| i + 1)
        .ok_or(DysonError::InsufficientStates { n_electrons: n, n_states: n_b })?;
    let keep = n_occ + n_extra_states(n_occ);
    if keep > n_b {
        return Err(DysonError::InsufficientStates {
            n_electrons: n,
            n_states: n_b,
        });
    }
    // renormalise over the retained occupied states only when truncation lost charge; a gapped
    // spectrum keeps its mid-gap level
    let truncated = &occ_all[..n_occ];
    let (fermi_level, occ) = if (truncated.iter().sum::<f64>() - n as f64).abs() <= 1e-12 * n as f64 {
        (ef_all, truncated.to_vec())
    } else {
        fermi_and_occupations(&eps_all[..n_occ], n, t, model.smearing)?
    };
    let eps = eps_all[..keep].to_vec();
    let orbitals: Vec<_> = phi_all.into_iter().take(keep).collect();
    let rho = compute_density(grids, &orbitals[..n_occ], &occ)?;
    Ok(KsOutput {
        ham,
        eps,
        orbitals,
        occ,
        fermi_level,
        rho,
    })
}

/// Input-to-output density map `F_KS(ρ)`.
pub fn kohn_sham_map(model: &ModelSpec, grids: &Arc<FourierGrids>, rho: &[f64]) -> Result<Vec<f64>> {
    let v_ext = external_potential(grids, &model.gaussians);
    let v = local_potential(model, grids, &v_ext, rho)?;
    Ok(ks_step(model, grids, v)?.rho)
}

/// Damped fixed-point SCF `ρ ← ρ + β M (F_KS(ρ) − ρ)` from a uniform start.
pub fn run_scf(model: &ModelSpec, options: &ScfOptions) -> Result<GroundState> {
    model.validate()?;
    if !(options.tol > 0.0) {
        return Err(DysonError::InvalidInput(format!("SCF tolerance must be positive, got {}", options.tol)));
    }
    let grids = Arc::new(model.build_grids()?);
    let kerker = options.kerker_alpha.map(Kerker::new).transpose()?;
    let v_ext = external_potential(&grids, &model.gaussians);
    let quad = (grids.volume() / grids.n_g() as f64).sqrt();
    let mut rho_in = vec![model.n_electrons as f64 / grids.volume(); grids.n_g()];
    let mut residual = f64::INFINITY;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    for iteration in 1..=options.max_iter {
        let v = local_potential(model, &grids, &v_ext, &rho_in)?;
        let out = ks_step(model, &grids, v)?;
        let diff: Vec<f64> = out.rho.iter().zip(&rho_in).map(|(o, i)| o - i).collect();
        residual = norm2(&diff) * quad;
        if residual <= options.tol {
            return GroundState::from_parts(
                grids.clone(),
                GroundStateParts {
                    model: model.clone(),
                    v_local: out.ham.v_local().to_vec(),
                    orbitals: out.orbitals,
                    eps: out.eps,
                    occ: out.occ,
                    fermi_level: out.fermi_level,
                    rho: out.rho,
                    rho_input: rho_in,
                    scf_residual: residual,
                    scf_iterations: iteration,
                },
            );
        }
        let precondition = |x: &[f64]| -> Result<Vec<f64>> {
            match &kerker {
                Some(k) => k.apply(&grids, x),
                None => Ok(x.to_vec()),
            }
        };
        let beta = options.damping;
        let mut next: Vec<f64> = rho_in.iter().zip(precondition(&diff)?).map(|(r, s)| r + beta * s).collect();
        if options.anderson_depth > 0 {
            if !history.is_empty() {
                let n = diff.len();
                let k = history.len();
                let d_res = DMatrix::from_fn(n, k, |i, j| diff[i] - history[j].1[i]);
                let rhs = DVector::from_column_slice(&diff);
                let gamma = d_res
                    .svd(true, true)
                    .solve(&rhs, 1e-10)
                    .map_err(|e| DysonError::InvalidInput(format!("Anderson least squares failed: {e}")))?;
                for (j, (rho_j, res_j)) in history.iter().enumerate() {
                    let d_rho: Vec<f64> = rho_in.iter().zip(rho_j).map(|(a, b)| a - b).collect();
                    let d_r: Vec<f64> = diff.iter().zip(res_j).map(|(a, b)| a - b).collect();
                    let pd_r = precondition(&d_r)?;
                    for ((x, dr), pr) in next.iter_mut().zip(&d_rho).zip(&pd_r) {
                        *x -= gamma[j] * (dr + beta * pr);
                    }
                }
            }
            history.push_back((rho_in.clone(), diff));
            if history.len() > options.anderson_depth {
                history.pop_front();
            }
        }
        rho_in = next;
    }
    Err(DysonError::ScfNotConverged {
        iterations: options.max_iter,
        residual,
    })
}
