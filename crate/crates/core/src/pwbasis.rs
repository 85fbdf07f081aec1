//! Periodic lattice, plane-wave grids and the normalised transforms between
//! sphere coefficients and real-space grid values.
//!
//! Conventions: plane waves are `e_G(r) = exp(i G·r) / sqrt(|Ω|)`. With
//! `w = sqrt(|Ω| / N_g)` and `W` the unitary DFT on the cube, the forward
//! transform is `F = w Zᵀ W` and the inverse `F⁻¹ = w⁻¹ W⁻¹ Z`, where `Z`
//! zero-pads sphere coefficients into the cube. Real-space arrays are stored
//! x-fastest: `index = ix + nx * (iy + ny * iz)`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, DysonError, Result};

pub type Vec3 = [f64; 3];

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Simulation cell `Ω` spanned by `a1, a2, a3` (Bohr) and its reciprocal basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Lattice {
    vectors: [Vec3; 3],
    reciprocal: [Vec3; 3],
    volume: f64,
}

impl Lattice {
    pub fn new(a1: Vec3, a2: Vec3, a3: Vec3) -> Result<Self> {
        if [a1, a2, a3].iter().flatten().any(|x| !x.is_finite()) {
            return Err(DysonError::InvalidInput("non-finite lattice vector".into()));
        }
        let c23 = cross(&a2, &a3);
        let det = dot(&a1, &c23);
        if det.abs() < 1e-12 {
            return Err(DysonError::InvalidInput("degenerate lattice vectors".into()));
        }
        let c31 = cross(&a3, &a1);
        let c12 = cross(&a1, &a2);
        let scale = 2.0 * PI / det;
        let b = |c: Vec3| [c[0] * scale, c[1] * scale, c[2] * scale];
        Ok(Self {
            vectors: [a1, a2, a3],
            reciprocal: [b(c23), b(c31), b(c12)],
            volume: det.abs(),
        })
    }

    /// Orthorhombic cell with edge lengths `lx, ly, lz`.
    pub fn orthorhombic(lx: f64, ly: f64, lz: f64) -> Result<Self> {
        Self::new([lx, 0.0, 0.0], [0.0, ly, 0.0], [0.0, 0.0, lz])
    }

    pub fn cubic(a: f64) -> Result<Self> {
        Self::orthorhombic(a, a, a)
    }

    pub fn vectors(&self) -> &[Vec3; 3] {
        &self.vectors
    }

    pub fn reciprocal(&self) -> &[Vec3; 3] {
        &self.reciprocal
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Cartesian position of fractional coordinates.
    pub fn to_cartesian(&self, frac: &Vec3) -> Vec3 {
        let a = &self.vectors;
        std::array::from_fn(|d| frac[0] * a[0][d] + frac[1] * a[1][d] + frac[2] * a[2][d])
    }

    /// Reciprocal vector `i1 b1 + i2 b2 + i3 b3`.
    pub fn g_vector(&self, idx: [i64; 3]) -> Vec3 {
        let b = &self.reciprocal;
        std::array::from_fn(|d| {
            idx[0] as f64 * b[0][d] + idx[1] as f64 * b[1][d] + idx[2] as f64 * b[2][d]
        })
    }

    /// Length of the cell diagonal `|a1 + a2 + a3|` bounded by the sum of edges.
    pub fn diameter(&self) -> f64 {
        self.vectors.iter().map(norm).sum()
    }
}

impl TryFrom<[[f64; 3]; 3]> for Lattice {
    type Error = DysonError;

    fn try_from(v: [[f64; 3]; 3]) -> Result<Self> {
        Lattice::new(v[0], v[1], v[2])
    }
}

impl From<Lattice> for [[f64; 3]; 3] {
    fn from(l: Lattice) -> Self {
        l.vectors
    }
}

/// Smallest even integer `>= n` whose only prime factors are 2, 3 and 5.
pub fn next_smooth_even(n: usize) -> usize {
    let mut m = n.max(2);
    if m % 2 == 1 {
        m += 1;
    }
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 2;
    }
}

/// Batched 3D FFT over an x-fastest cube.
struct Fft3 {
    dims: [usize; 3],
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = dims.map(|n| planner.plan_fft_forward(n));
        let inverse = dims.map(|n| planner.plan_fft_inverse(n));
        Self {
            dims,
            forward,
            inverse,
        }
    }

    /// Unnormalised transform: forward is `Σ_r u(r) e^{-iG·r}`, inverse `Σ_G û e^{+iG·r}`.
    fn process(&self, data: &mut [Complex64], inverse: bool) {
        let [nx, ny, nz] = self.dims;
        let plans = if inverse { &self.inverse } else { &self.forward };

        let mut scratch = vec![Complex64::new(0.0, 0.0); plans.iter().map(|p| p.get_inplace_scratch_len()).max().unwrap_or(0)];
        plans[0].process_with_scratch(data, &mut scratch);

        let mut lines = vec![Complex64::new(0.0, 0.0); data.len()];
        // y lines
        for iz in 0..nz {
            for ix in 0..nx {
                let line = &mut lines[(iz * nx + ix) * ny..(iz * nx + ix + 1) * ny];
                for (iy, l) in line.iter_mut().enumerate() {
                    *l = data[ix + nx * (iy + ny * iz)];
                }
            }
        }
        plans[1].process_with_scratch(&mut lines, &mut scratch);
        for iz in 0..nz {
            for ix in 0..nx {
                let line = &lines[(iz * nx + ix) * ny..(iz * nx + ix + 1) * ny];
                for (iy, l) in line.iter().enumerate() {
                    data[ix + nx * (iy + ny * iz)] = *l;
                }
            }
        }
        // z lines
        let nxy = nx * ny;
        for ixy in 0..nxy {
            let line = &mut lines[ixy * nz..(ixy + 1) * nz];
            for (iz, l) in line.iter_mut().enumerate() {
                *l = data[ixy + nxy * iz];
            }
        }
        plans[2].process_with_scratch(&mut lines, &mut scratch);
        for ixy in 0..nxy {
            let line = &lines[ixy * nz..(ixy + 1) * nz];
            for (iz, l) in line.iter().enumerate() {
                data[ixy + nxy * iz] = *l;
            }
        }
    }
}

impl fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fft3").field("dims", &self.dims).finish()
    }
}

/// Spherical orbital grid and cubic density grid for a lattice and cutoff.
///
/// Immutable after construction; all transforms take `&self` and can be
/// called concurrently.
#[derive(Debug)]
pub struct FourierGrids {
    lattice: Lattice,
    e_cut: f64,
    g_sphere: Vec<[i64; 3]>,
    cube_dims: [usize; 3],
    sphere_to_cube: Vec<usize>,
    kinetic: Vec<f64>,
    cube_g2: Vec<f64>,
    fft: Fft3,
}

impl FourierGrids {
    pub fn new(lattice: Lattice, e_cut: f64) -> Result<Self> {
        if !e_cut.is_finite() || e_cut <= 0.0 {
            return Err(DysonError::InvalidInput(format!(
                "cutoff energy must be positive and finite, got {e_cut}"
            )));
        }
        let g_max = (2.0 * e_cut).sqrt();
        let a = lattice.vectors();

        // |i_d| = |G·a_d| / 2π <= |G| |a_d| / 2π
        let bound = |radius: f64, d: usize| (radius * norm(&a[d]) / (2.0 * PI)).floor() as i64;
        let sphere_bound: [i64; 3] = std::array::from_fn(|d| bound(g_max, d));
        let cube_bound: [i64; 3] = std::array::from_fn(|d| bound(2.0 * g_max, d));
        let cube_dims: [usize; 3] =
            std::array::from_fn(|d| next_smooth_even(2 * cube_bound[d] as usize + 2));

        let mut g_sphere = Vec::new();
        for i1 in -sphere_bound[0]..=sphere_bound[0] {
            for i2 in -sphere_bound[1]..=sphere_bound[1] {
                for i3 in -sphere_bound[2]..=sphere_bound[2] {
                    let g = lattice.g_vector([i1, i2, i3]);
                    if dot(&g, &g) <= 2.0 * e_cut {
                        g_sphere.push([i1, i2, i3]);
                    }
                }
            }
        }

        let [nx, ny, nz] = cube_dims;
        let wrap = |i: i64, n: usize| i.rem_euclid(n as i64) as usize;
        let sphere_to_cube = g_sphere
            .iter()
            .map(|g| wrap(g[0], nx) + nx * (wrap(g[1], ny) + ny * wrap(g[2], nz)))
            .collect();
        let kinetic = g_sphere
            .iter()
            .map(|&idx| {
                let g = lattice.g_vector(idx);
                0.5 * dot(&g, &g)
            })
            .collect();

        let unwrap = |i: usize, n: usize| {
            let i = i as i64;
            if i >= n as i64 / 2 {
                i - n as i64
            } else {
                i
            }
        };
        let mut cube_g2 = Vec::with_capacity(nx * ny * nz);
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    let g = lattice.g_vector([unwrap(ix, nx), unwrap(iy, ny), unwrap(iz, nz)]);
                    cube_g2.push(dot(&g, &g));
                }
            }
        }

        Ok(Self {
            lattice,
            e_cut,
            g_sphere,
            cube_dims,
            sphere_to_cube,
            kinetic,
            cube_g2,
            fft: Fft3::new(cube_dims),
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn e_cut(&self) -> f64 {
        self.e_cut
    }

    pub fn volume(&self) -> f64 {
        self.lattice.volume()
    }

    /// Integer coordinates of the sphere vectors, lexicographically ordered.
    pub fn g_sphere(&self) -> &[[i64; 3]] {
        &self.g_sphere
    }

    pub fn cube_dims(&self) -> [usize; 3] {
        self.cube_dims
    }

    pub fn n_b(&self) -> usize {
        self.g_sphere.len()
    }

    pub fn n_g(&self) -> usize {
        self.cube_dims.iter().product()
    }

    /// Transform weight `w = sqrt(|Ω| / N_g)`.
    pub fn weight(&self) -> f64 {
        (self.volume() / self.n_g() as f64).sqrt()
    }

    /// `½|G|²` for each sphere vector.
    pub fn kinetic(&self) -> &[f64] {
        &self.kinetic
    }

    /// `|G|²` for each cube index, x-fastest layout (unwrapped frequencies).
    pub fn cube_g2(&self) -> &[f64] {
        &self.cube_g2
    }

    /// Position in the cube array of each sphere coefficient.
    pub fn sphere_to_cube(&self) -> &[usize] {
        &self.sphere_to_cube
    }

    /// Cartesian real-space grid points, x-fastest.
    pub fn real_space_points(&self) -> Vec<Vec3> {
        let [nx, ny, nz] = self.cube_dims;
        let mut out = Vec::with_capacity(self.n_g());
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    out.push(self.lattice.to_cartesian(&[
                        ix as f64 / nx as f64,
                        iy as f64 / ny as f64,
                        iz as f64 / nz as f64,
                    ]));
                }
            }
        }
        out
    }

    /// `F⁻¹`: sphere coefficients to real-space values.
    pub fn to_real(&self, coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
        check_len("to_real", self.n_b(), coeffs.len())?;
        let mut cube = vec![Complex64::new(0.0, 0.0); self.n_g()];
        for (&c, &i) in coeffs.iter().zip(&self.sphere_to_cube) {
            cube[i] = c;
        }
        self.fft.process(&mut cube, true);
        let scale = 1.0 / self.volume().sqrt();
        cube.iter_mut().for_each(|c| *c *= scale);
        Ok(cube)
    }

    /// `F`: real-space values to sphere coefficients.
    pub fn to_fourier(&self, values: &[Complex64]) -> Result<Vec<Complex64>> {
        check_len("to_fourier", self.n_g(), values.len())?;
        let mut cube = values.to_vec();
        self.fft.process(&mut cube, false);
        let scale = self.volume().sqrt() / self.n_g() as f64;
        Ok(self.sphere_to_cube.iter().map(|&i| cube[i] * scale).collect())
    }

    /// Real-space real values to sphere coefficients.
    pub fn to_fourier_real(&self, values: &[f64]) -> Result<Vec<Complex64>> {
        let complex: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.to_fourier(&complex)
    }

    /// Unnormalised forward DFT of a real-space cube array.
    pub fn cube_forward(&self, values: &[f64]) -> Result<Vec<Complex64>> {
        check_len("cube_forward", self.n_g(), values.len())?;
        let mut cube: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.process(&mut cube, false);
        Ok(cube)
    }

    /// Inverse of [`cube_forward`](Self::cube_forward) (includes the `1/N_g`), real part.
    pub fn cube_inverse_real(&self, mut coeffs: Vec<Complex64>) -> Result<Vec<f64>> {
        check_len("cube_inverse_real", self.n_g(), coeffs.len())?;
        self.fft.process(&mut coeffs, true);
        let scale = 1.0 / self.n_g() as f64;
        Ok(coeffs.iter().map(|c| c.re * scale).collect())
    }

    /// Applies a real Fourier multiplier `m(|G|²)` to a real grid function.
    /// The real part of the result is returned.
    pub fn apply_multiplier(&self, values: &[f64], multiplier: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
        let mut coeffs = self.cube_forward(values)?;
        for (c, &g2) in coeffs.iter_mut().zip(&self.cube_g2) {
            *c *= multiplier(g2);
        }
        self.cube_inverse_real(coeffs)
    }

    /// Map from sphere index to the index of `-G`.
    pub fn negation_map(&self) -> Vec<usize> {
        let lookup: HashMap<[i64; 3], usize> =
            self.g_sphere.iter().enumerate().map(|(i, g)| (*g, i)).collect();
        self.g_sphere
            .iter()
            .map(|g| lookup[&[-g[0], -g[1], -g[2]]])
            .collect()
    }
}

/// Euclidean norm of a real vector.
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean norm of a complex vector.
pub fn norm2c(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}
