//! Smearing functions, Fermi level and occupations.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{DysonError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Smearing {
    #[default]
    FermiDirac,
    Gaussian,
}

impl Smearing {
    /// Occupation `f(x)` in `[0, 2]` (spin factor included).
    pub fn occupation(self, x: f64) -> f64 {
        match self {
            Smearing::FermiDirac => {
                if x > 0.0 {
                    let e = (-x).exp();
                    2.0 * e / (1.0 + e)
                } else {
                    2.0 / (1.0 + x.exp())
                }
            }
            Smearing::Gaussian => erfc(x),
        }
    }

    /// `df/dx`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Smearing::FermiDirac => {
                let e = (-x.abs()).exp();
                -2.0 * e / ((1.0 + e) * (1.0 + e))
            }
            Smearing::Gaussian => -2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp(),
        }
    }
}

/// Fermi level and occupations `f_n = f((ε_n − ε_F)/T)` with `Σ f_n = N`.
pub fn fermi_and_occupations(
    eps: &[f64],
    n_electrons: usize,
    temperature: f64,
    smearing: Smearing,
) -> Result<(f64, Vec<f64>)> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(DysonError::InvalidInput(format!("temperature must be positive, got {temperature}")));
    }
    let target = n_electrons as f64;
    if 2.0 * eps.len() as f64 <= target - 1e-12 || (eps.is_empty() && n_electrons > 0) {
        return Err(DysonError::InsufficientStates {
            n_electrons,
            n_states: eps.len(),
        });
    }
    let count = |ef: f64| -> f64 {
        eps.iter()
            .map(|&e| smearing.occupation((e - ef) / temperature))
            .sum()
    };
    let lo_e = eps.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi_e = eps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut lo = lo_e - 50.0 * temperature - 1.0;
    let mut hi = hi_e + 50.0 * temperature + 1.0;
    if count(hi) < target - 1e-10 {
        return Err(DysonError::InsufficientStates {
            n_electrons,
            n_states: eps.len(),
        });
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lower_edge = 0.5 * (lo + hi);
    // a gap leaves a plateau where the count equals N to machine precision; centre ε_F in it
    let ceiling = hi_e + 50.0 * temperature + 1.0;
    let ef = if count(ceiling) > target {
        let (mut a, mut b) = (lower_edge, ceiling);
        for _ in 0..400 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if count(mid) > target {
                b = mid;
            } else {
                a = mid;
            }
        }
        0.5 * (lower_edge + 0.5 * (a + b))
    } else {
        lower_edge
    };
    let occ = eps
        .iter()
        .map(|&e| smearing.occupation((e - ef) / temperature))
        .collect();
    Ok((ef, occ))
}
