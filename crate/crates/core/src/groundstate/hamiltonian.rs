//! Local Hamiltonian `H = -½Δ + V_local` on the spherical basis.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{check_len, DysonError, Result};
use crate::pwbasis::FourierGrids;

/// Shared count of Hamiltonian applications. Clones share the same counter.
#[derive(Debug, Clone, Default)]
pub struct HamCounter(Arc<AtomicU64>);

impl HamCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone)]
pub struct Hamiltonian {
    grids: Arc<FourierGrids>,
    v_local: Vec<f64>,
    counter: HamCounter,
}

impl Hamiltonian {
    pub fn new(grids: Arc<FourierGrids>, v_local: Vec<f64>) -> Result<Self> {
        check_len("hamiltonian potential", grids.n_g(), v_local.len())?;
        if v_local.iter().any(|v| !v.is_finite()) {
            return Err(DysonError::InvalidInput("non-finite local potential".into()));
        }
        Ok(Self {
            grids,
            v_local,
            counter: HamCounter::new(),
        })
    }

    pub fn grids(&self) -> &Arc<FourierGrids> {
        &self.grids
    }

    pub fn v_local(&self) -> &[f64] {
        &self.v_local
    }

    pub fn counter(&self) -> &HamCounter {
        &self.counter
    }

    /// `½|G|² ψ + F(v ⊙ F⁻¹ψ)`; counts one application.
    pub fn apply(&self, psi: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut real = self.grids.to_real(psi)?;
        for (r, &v) in real.iter_mut().zip(&self.v_local) {
            *r *= v;
        }
        let mut out = self.grids.to_fourier(&real)?;
        for ((o, &k), &p) in out.iter_mut().zip(self.grids.kinetic()).zip(psi) {
            *o += k * p;
        }
        self.counter.bump();
        Ok(out)
    }

    /// Dense matrix of the operator realised by [`apply`](Self::apply), built
    /// from the unnormalised DFT of the potential.
    pub fn dense_matrix(&self) -> Result<DMatrix<Complex64>> {
        let grids = &self.grids;
        let v_hat = grids.cube_forward(&self.v_local)?;
        let n_g = grids.n_g() as f64;
        let [nx, ny, nz] = grids.cube_dims();
        let g = grids.g_sphere();
        let wrap = |i: i64, n: usize| i.rem_euclid(n as i64) as usize;
        let n_b = grids.n_b();
        Ok(DMatrix::from_fn(n_b, n_b, |i, j| {
            let d = [g[i][0] - g[j][0], g[i][1] - g[j][1], g[i][2] - g[j][2]];
            let idx = wrap(d[0], nx) + nx * (wrap(d[1], ny) + ny * wrap(d[2], nz));
            let mut h = v_hat[idx] / n_g;
            if i == j {
                h += grids.kinetic()[i];
            }
            h
        }))
    }
}

/// Unitary map from the real cosine/sine basis to plane-wave coefficients.
/// Each column has at most two nonzeros: `(index, value)` pairs.
pub(crate) fn real_basis(grids: &FourierGrids) -> Vec<Vec<(usize, Complex64)>> {
    let neg = grids.negation_map();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut cols = Vec::with_capacity(grids.n_b());
    for (i, &j) in neg.iter().enumerate() {
        if i == j {
            cols.push(vec![(i, Complex64::new(1.0, 0.0))]);
        } else if i < j {
            cols.push(vec![(i, Complex64::new(s, 0.0)), (j, Complex64::new(s, 0.0))]);
            cols.push(vec![(i, Complex64::new(0.0, -s)), (j, Complex64::new(0.0, s))]);
        }
    }
    cols
}

/// Lowest `n_states` eigenpairs (ascending) of the Hamiltonian by dense
/// diagonalisation. Eigenvectors are chosen so that their real-space values are real.
pub fn diagonalize_dense(ham: &Hamiltonian, n_states: usize) -> Result<(Vec<f64>, Vec<Vec<Complex64>>)> {
    let n_b = ham.grids.n_b();
    if n_states > n_b {
        return Err(DysonError::InsufficientStates {
            n_electrons: n_states,
            n_states: n_b,
        });
    }
    let h = ham.dense_matrix()?;
    let basis = real_basis(&ham.grids);
    let real_h = DMatrix::from_fn(n_b, n_b, |a, b| {
        let mut acc = Complex64::new(0.0, 0.0);
        for &(i, ui) in &basis[a] {
            for &(j, uj) in &basis[b] {
                acc += ui.conj() * h[(i, j)] * uj;
            }
        }
        acc.re
    });
    let real_h = (&real_h + real_h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(real_h);
    let mut order: Vec<usize> = (0..n_b).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut eps = Vec::with_capacity(n_states);
    let mut phi = Vec::with_capacity(n_states);
    for &k in order.iter().take(n_states) {
        eps.push(eig.eigenvalues[k]);
        let mut col = vec![Complex64::new(0.0, 0.0); n_b];
        for (a, entries) in basis.iter().enumerate() {
            let x = eig.eigenvectors[(a, k)];
            for &(i, u) in entries {
                col[i] += u * x;
            }
        }
        phi.push(col);
    }
    Ok((eps, phi))
}
