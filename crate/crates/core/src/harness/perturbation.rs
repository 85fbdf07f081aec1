//! Potential change `δV₀` from displacing one Gaussian well.

use std::f64::consts::PI;

use crate::error::{DysonError, Result};
use crate::groundstate::{external_potential, external_potential_derivative, GaussianWell, ModelSpec};
use crate::harness::config::PerturbationSpec;
use crate::pwbasis::{FourierGrids, Vec3};

fn unit_direction(d: &Vec3) -> Result<Vec3> {
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(DysonError::Config(format!("perturbation direction must be a nonzero finite vector, got {d:?}")));
    }
    Ok([d[0] / norm, d[1] / norm, d[2] / norm])
}

fn shifted(grids: &FourierGrids, g: &GaussianWell, cart: Vec3) -> GaussianWell {
    let b = grids.lattice().reciprocal();
    let mut out = *g;
    for (c, bi) in out.center.iter_mut().zip(b) {
        *c += (bi[0] * cart[0] + bi[1] * cart[1] + bi[2] * cart[2]) / (2.0 * PI);
    }
    out
}

/// `amplitude · d/dh V_j(c_j + h d)` at `h = 0`, on the real-space grid.
pub fn build_perturbation(model: &ModelSpec, grids: &FourierGrids, spec: &PerturbationSpec) -> Result<Vec<f64>> {
    let g = model.gaussians.get(spec.gaussian).ok_or_else(|| {
        DysonError::Config(format!(
            "perturbation gaussian index {} out of range ({} gaussians)",
            spec.gaussian,
            model.gaussians.len()
        ))
    })?;
    let d = unit_direction(&spec.direction)?;
    let raw = if spec.analytic {
        external_potential_derivative(grids, g, &d)
    } else {
        let h = spec.fd_step;
        let plus = external_potential(grids, &[shifted(grids, g, [h * d[0], h * d[1], h * d[2]])]);
        let minus = external_potential(grids, &[shifted(grids, g, [-h * d[0], -h * d[1], -h * d[2]])]);
        plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect()
    };
    Ok(raw.into_iter().map(|x| spec.amplitude * x).collect())
}
