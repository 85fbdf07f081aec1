//! Per-band Sternheimer tolerances for a given GMRES error budget.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DysonError, Result};

/// Smallest tolerance ever handed to CG.
pub const MIN_TOLERANCE: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Grt,
    Bal,
    Agr,
    D10,
    D100,
    D10n,
}

impl StrategyKind {
    pub fn is_adaptive(self) -> bool {
        matches!(self, StrategyKind::Grt | StrategyKind::Bal | StrategyKind::Agr)
    }

    fn name(self) -> &'static str {
        match self {
            StrategyKind::Grt => "grt",
            StrategyKind::Bal => "bal",
            StrategyKind::Agr => "agr",
            StrategyKind::D10 => "d10",
            StrategyKind::D100 => "d100",
            StrategyKind::D10n => "d10n",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub preconditioned: bool,
    pub tau: f64,
    pub m: usize,
    /// Keep the eigenvalue-gap factor `ε_{N_occ+1} − ε_n` in adaptive tolerances.
    #[serde(default)]
    pub include_gap: bool,
}

impl StrategySpec {
    pub fn new(kind: StrategyKind, preconditioned: bool, tau: f64, m: usize) -> Result<Self> {
        if !(tau > 0.0) || m == 0 {
            return Err(DysonError::Config(format!("strategy needs tau > 0 and m ≥ 1 (tau = {tau}, m = {m})")));
        }
        Ok(Self {
            kind,
            preconditioned,
            tau,
            m,
            include_gap: false,
        })
    }

    /// Parses CLI names such as `bal`, `pgrt`, `d10n`.
    pub fn parse(name: &str, tau: f64, m: usize) -> Result<Self> {
        let (kind, pre) = parse_name(name)?;
        Self::new(kind, pre, tau, m)
    }

    pub fn label(&self) -> String {
        format!("{}{}", if self.preconditioned { "p" } else { "" }, self.kind.name())
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn parse_name(name: &str) -> Result<(StrategyKind, bool)> {
    let lower = name.trim().to_ascii_lowercase();
    let kind_of = |s: &str| StrategyKind::from_str(s).ok();
    if let Some(k) = kind_of(&lower) {
        return Ok((k, false));
    }
    if let Some(rest) = lower.strip_prefix('p') {
        if let Some(k) = kind_of(rest) {
            return Ok((k, true));
        }
    }
    Err(DysonError::Config(format!("unknown strategy '{name}'")))
}

impl FromStr for StrategyKind {
    type Err = DysonError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "grt" => StrategyKind::Grt,
            "bal" => StrategyKind::Bal,
            "agr" => StrategyKind::Agr,
            "d10" => StrategyKind::D10,
            "d100" => StrategyKind::D100,
            "d10n" => StrategyKind::D10n,
            _ => return Err(DysonError::Config(format!("unknown strategy kind '{s}'"))),
        })
    }
}

/// Everything the tolerance formulas may need at one operator application.
#[derive(Debug, Clone, PartialEq)]
pub struct ToleranceContext<'a> {
    /// Error budget granted by GMRES for this application.
    pub budget: f64,
    pub kv_norm: Option<f64>,
    /// `‖Re(F⁻¹Φ)‖_{2,∞}`.
    pub row_norm: Option<f64>,
    pub volume: f64,
    pub n_g: usize,
    pub occ: &'a [f64],
    /// `‖δρ₀‖`.
    pub rhs_norm: Option<f64>,
    /// `ε_{N_occ+1} − ε_n` per band.
    pub eps_gap: Option<&'a [f64]>,
}

/// GMRES budget `(s/3m) τ / ‖r̃_{i−1}‖`.
pub fn gmres_budget(s: f64, m: usize, tau: f64, est_res_prev: f64) -> f64 {
    s / (3.0 * m as f64) * tau / est_res_prev
}

fn positive(value: Option<f64>, what: &str) -> Result<f64> {
    match value {
        Some(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(DysonError::Config(format!("{what} must be present and positive"))),
    }
}

/// Band-independent factor multiplying `budget / f_n` for `grt` and `bal`.
pub fn prefactor(spec: &StrategySpec, ctx: &ToleranceContext<'_>) -> Result<f64> {
    let n_occ = ctx.occ.len() as f64;
    let vol_sqrt = ctx.volume.sqrt();
    let base = vol_sqrt / (2.0 * (ctx.n_g as f64 * n_occ).sqrt());
    match spec.kind {
        StrategyKind::Grt => {
            let kv = positive(ctx.kv_norm, "‖Kv‖")?;
            let row = positive(ctx.row_norm, "orbital row norm")?;
            Ok(base / (kv * row))
        }
        StrategyKind::Bal => Ok(base * vol_sqrt / n_occ.sqrt()),
        _ => Ok(1.0),
    }
}

pub fn select_tolerances(spec: &StrategySpec, ctx: &ToleranceContext<'_>) -> Result<Vec<f64>> {
    if ctx.occ.is_empty() || !(ctx.volume > 0.0) || ctx.n_g == 0 {
        return Err(DysonError::Config("tolerance context has empty occupations or grid".into()));
    }
    let tau = spec.tau;
    let raw: Vec<f64> = match spec.kind {
        StrategyKind::D10 => vec![tau / 10.0; ctx.occ.len()],
        StrategyKind::D100 => vec![tau / 100.0; ctx.occ.len()],
        StrategyKind::D10n => {
            let r = positive(ctx.rhs_norm, "‖δρ₀‖")?;
            vec![tau / (10.0 * r); ctx.occ.len()]
        }
        kind => {
            let budget = positive(Some(ctx.budget), "GMRES budget")?;
            let pre = prefactor(spec, ctx)?;
            let gaps = if spec.include_gap {
                let g = ctx
                    .eps_gap
                    .ok_or_else(|| DysonError::Config("eigenvalue gaps required".into()))?;
                if g.len() != ctx.occ.len() || g.iter().any(|x| !(*x > 0.0)) {
                    return Err(DysonError::Config("eigenvalue gaps must be positive, one per band".into()));
                }
                Some(g)
            } else {
                None
            };
            ctx.occ
                .iter()
                .enumerate()
                .map(|(n, &f)| {
                    if !(f > 0.0) {
                        return Err(DysonError::Config(format!("occupation of band {n} is not positive")));
                    }
                    let per_band = if kind == StrategyKind::Agr { 1.0 } else { 1.0 / f };
                    Ok(budget * pre * per_band * gaps.map_or(1.0, |g| g[n]))
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(raw.into_iter().map(|t| t.max(MIN_TOLERANCE)).collect())
}
