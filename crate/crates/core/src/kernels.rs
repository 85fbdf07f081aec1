//! Hartree-exchange kernel `K` and the charge-conserving Kerker preconditioner `T`.

use std::f64::consts::PI;

use crate::error::{check_len, DysonError, Result};
use crate::groundstate::{hartree_potential, Xc};
use crate::pwbasis::FourierGrids;

/// Floor applied to the reference density in the LDA exchange kernel.
pub const LDA_DENSITY_FLOOR: f64 = 1e-10;

/// `K = K_H (+ K_x)`, linear and symmetric on real grid functions.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    xc_factor: Option<Vec<f64>>,
}

impl Kernel {
    pub fn hartree() -> Self {
        Self { xc_factor: None }
    }

    /// Kernel for the given exchange model around the reference density.
    pub fn new(xc: Xc, rho_ref: &[f64]) -> Self {
        match xc {
            Xc::None => Self::hartree(),
            Xc::LdaX => {
                let c = -(1.0 / 3.0) * (3.0 / PI).cbrt();
                Self {
                    xc_factor: Some(rho_ref.iter().map(|&r| c * r.max(LDA_DENSITY_FLOOR).powf(-2.0 / 3.0)).collect()),
                }
            }
        }
    }

    pub fn apply(&self, grids: &FourierGrids, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = hartree_potential(grids, v)?;
        if let Some(factor) = &self.xc_factor {
            check_len("xc kernel", factor.len(), v.len())?;
            for ((o, f), x) in out.iter_mut().zip(factor).zip(v) {
                *o += f * x;
            }
        }
        Ok(out)
    }
}

/// `T = (I − P₁) W⁻¹ D W + P₁`, `D = |G|²/(|G|² + α²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kerker {
    alpha: f64,
}

impl Kerker {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(DysonError::InvalidInput(format!("Kerker alpha must be non-negative, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Fourier damping factor for a given `|G|²` (the `G = 0` mode is passed through separately).
    pub fn damping(&self, g2: f64) -> f64 {
        let a2 = self.alpha * self.alpha;
        if a2 == 0.0 {
            1.0
        } else {
            g2 / (g2 + a2)
        }
    }

    pub fn apply(&self, grids: &FourierGrids, v: &[f64]) -> Result<Vec<f64>> {
        check_len("kerker", grids.n_g(), v.len())?;
        if self.alpha == 0.0 {
            return Ok(v.to_vec());
        }
        // the mean bypasses the FFT; shifting by v[0] keeps constants bit-exact
        let shift = v[0];
        let shifted: Vec<f64> = v.iter().map(|x| x - shift).collect();
        let mean = shift + shifted.iter().sum::<f64>() / v.len() as f64;
        let damped = grids.apply_multiplier(&shifted, |g2| if g2 > 0.0 { self.damping(g2) } else { 0.0 })?;
        Ok(damped.into_iter().map(|x| x + mean).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pwbasis::Lattice;
    use nalgebra::{DMatrix, SymmetricEigen};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> FourierGrids {
        let g = FourierGrids::new(Lattice::orthorhombic(5.0, 4.0, 4.5).unwrap(), 1.5).unwrap();
        assert!(g.n_g() <= 512);
        g
    }

    fn dense(g: &FourierGrids, f: impl Fn(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
        let n = g.n_g();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            for (i, x) in f(&e).into_iter().enumerate() {
                m[(i, j)] = x;
            }
        }
        m
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn kernel_of_constant_and_cosine() {
        let g = tiny();
        let k = Kernel::hartree();
        assert!(k.apply(&g, &vec![2.0; g.n_g()]).unwrap().iter().all(|x| x.abs() < 1e-12));
        let b = g.lattice().reciprocal()[1];
        let g2 = b[1] * b[1];
        let v: Vec<f64> = g.real_space_points().iter().map(|r| (b[1] * r[1]).cos()).collect();
        for (o, x) in k.apply(&g, &v).unwrap().iter().zip(&v) {
            assert!((o - 4.0 * PI / g2 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_is_symmetric_dense() {
        let g = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho: Vec<f64> = (0..g.n_g()).map(|_| rng.gen_range(0.01..0.2)).collect();
        for k in [Kernel::hartree(), Kernel::new(Xc::LdaX, &rho)] {
            let m = dense(&g, |v| k.apply(&g, v).unwrap());
            assert!((&m - m.transpose()).norm() < 1e-12 * m.norm());
            let u: Vec<f64> = (0..g.n_g()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..g.n_g()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = dot(&u, &k.apply(&g, &v).unwrap());
            let b = dot(&k.apply(&g, &u).unwrap(), &v);
            assert!((a - b).abs() < 1e-11 * a.abs().max(1.0));
        }
    }

    #[test]
    fn lda_kernel_pointwise_and_floored() {
        let g = tiny();
        let mut rho = vec![0.05; g.n_g()];
        rho[0] = 0.0;
        let k = Kernel::new(Xc::LdaX, &rho);
        let v = vec![1.0; g.n_g()];
        let out = k.apply(&g, &v).unwrap();
        let c = -(1.0 / 3.0) * (3.0 / PI).cbrt();
        assert!((out[1] - c * 0.05f64.powf(-2.0 / 3.0)).abs() < 1e-10);
        assert!(out[0].is_finite());
        assert!((out[0] - c * LDA_DENSITY_FLOOR.powf(-2.0 / 3.0)).abs() < 1e-6 * out[0].abs());
    }

    #[test]
    fn kerker_zero_alpha_is_identity_and_conserves_constants() {
        let g = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v: Vec<f64> = (0..g.n_g()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert_eq!(Kerker::new(0.0).unwrap().apply(&g, &v).unwrap(), v);
        let big = FourierGrids::new(Lattice::orthorhombic(16.0, 7.0, 7.0).unwrap(), 3.0).unwrap();
        for value in [0.37, 0.731, -2.9e-3, 1.0 / 3.0] {
            for grid in [&g, &big] {
                let c = vec![value; grid.n_g()];
                assert_eq!(Kerker::new(0.8).unwrap().apply(grid, &c).unwrap(), c);
            }
        }
    }

    #[test]
    fn kerker_dense_spectrum() {
        let g = tiny();
        let t = Kerker::new(0.8).unwrap();
        let m = dense(&g, |v| t.apply(&g, v).unwrap());
        assert!((&m - m.transpose()).amax() < 1e-12);
        let eig = SymmetricEigen::new(m).eigenvalues;
        let max = eig.max();
        let min = eig.min();
        assert!(min > 0.0 && max <= 1.0 + 1e-12);
        assert!((max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kerker_damping_monotone() {
        let t = Kerker::new(0.8).unwrap();
        let mut prev = 0.0;
        for k in 1..200 {
            let d = t.damping(k as f64 * 0.05);
            assert!(d > prev && d < 1.0);
            prev = d;
        }
    }

    proptest! {
        #[test]
        fn kernel_linear_and_kerker_contractive(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let g = tiny();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<f64> = (0..g.n_g()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..g.n_g()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let k = Kernel::hartree();
            let comb: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
            let lhs = k.apply(&g, &comb).unwrap();
            let ku = k.apply(&g, &u).unwrap();
            let kv = k.apply(&g, &v).unwrap();
            let scale = lhs.iter().map(|x| x.abs()).fold(1.0, f64::max);
            for i in 0..g.n_g() {
                prop_assert!((lhs[i] - a * ku[i] - b * kv[i]).abs() < 1e-12 * scale);
            }
            let t = Kerker::new(0.8).unwrap();
            let tv = t.apply(&g, &v).unwrap();
            prop_assert!(crate::pwbasis::norm2(&tv) <= crate::pwbasis::norm2(&v) * (1.0 + 1e-12));
            let mean_v = v.iter().sum::<f64>();
            let mean_t = tv.iter().sum::<f64>();
            prop_assert!((mean_v - mean_t).abs() < 1e-12 * g.n_g() as f64);
        }
    }
}
