//! Restarted inexact GMRES over an operator that honours a per-application
//! error budget. The singular-value estimate `s` is adapted on restarts so that
//! at termination it bounds the smallest singular value of the Hessenberg matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{DysonError, Result};
use crate::pwbasis::norm2;

/// Lower clamp on requested budgets, relative to `‖b‖`.
pub const BUDGET_FLOOR: f64 = 1e-16;

/// Matrix-vector product with a guaranteed error: `‖A v − w‖ ≤ budget`.
/// Returns `w` and the cost of producing it.
pub trait BudgetedOperator {
    fn apply(&mut self, v: &[f64], budget: f64) -> Result<(Vec<f64>, u64)>;
}

impl<F> BudgetedOperator for F
where
    F: FnMut(&[f64], f64) -> Result<(Vec<f64>, u64)>,
{
    fn apply(&mut self, v: &[f64], budget: f64) -> Result<(Vec<f64>, u64)> {
        self(v, budget)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmresOptions {
    pub restart: usize,
    pub tau: f64,
    pub s_init: f64,
    /// Defaults to `100 m`.
    pub max_iterations: Option<usize>,
    /// Keep the last cycle's raw products, basis and Hessenberg matrix.
    pub keep_arnoldi: bool,
    /// Call the monitor every this many iterations (0 disables it).
    pub monitor_every: usize,
}

impl GmresOptions {
    pub fn new(restart: usize, tau: f64) -> Self {
        Self {
            restart,
            tau,
            s_init: 1.0,
            max_iterations: None,
            keep_arnoldi: false,
            monitor_every: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RestartReason {
    CycleFull,
    SViolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Global 1-based iteration count.
    pub iteration: usize,
    pub cycle: usize,
    /// 1-based position inside the cycle.
    pub inner: usize,
    /// Sequence number of the operator call that produced this iteration.
    pub application: usize,
    pub s: f64,
    pub est_res_prev: f64,
    pub budget: f64,
    pub budget_clamped: bool,
    pub est_res: f64,
    pub cost: u64,
    pub true_res: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialApplication {
    pub cycle: usize,
    pub application: usize,
    pub budget: f64,
    pub x0_norm: f64,
    pub cost: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub after_iteration: usize,
    pub reason: RestartReason,
    pub s_old: f64,
    pub s_new: f64,
}

/// Largest `|y_k| σ / ‖r̃_{k−1}‖` seen when forming a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YBoundCheck {
    pub after_iteration: usize,
    pub sigma: f64,
    pub max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArnoldiSnapshot {
    pub products: Vec<Vec<f64>>,
    pub basis: Vec<Vec<f64>>,
    pub hessenberg: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub converged: bool,
    pub iterations: Vec<IterationRecord>,
    pub initial_applications: Vec<InitialApplication>,
    pub restarts: Vec<RestartRecord>,
    /// Estimated residuals per cycle, starting with `‖r̃₀‖`.
    pub est_res_history: Vec<Vec<f64>>,
    pub y_bound_checks: Vec<YBoundCheck>,
    pub final_est_res: f64,
    pub final_s: f64,
    pub final_sigma: Option<f64>,
    pub total_cost: u64,
    pub clamp_events: usize,
    pub arnoldi: Option<ArnoldiSnapshot>,
}

impl SolveReport {
    pub fn max_y_ratio(&self) -> f64 {
        self.y_bound_checks.iter().map(|c| c.max_ratio).fold(0.0, f64::max)
    }
}

/// Incremental least-squares `min ‖βe₁ − H y‖` via Givens rotations.
#[derive(Debug, Clone, Default)]
pub struct GivensLs {
    rotations: Vec<(f64, f64)>,
    rhs: Vec<f64>,
    r_cols: Vec<Vec<f64>>,
}

impl GivensLs {
    pub fn new(beta: f64) -> Self {
        Self {
            rotations: Vec::new(),
            rhs: vec![beta],
            r_cols: Vec::new(),
        }
    }

    /// Appends Hessenberg column `i` (length `i + 1`) and returns the new
    /// estimated residual `‖βe₁ − H_i y_i‖`.
    pub fn push_column(&mut self, column: &[f64]) -> f64 {
        let i = self.r_cols.len();
        assert_eq!(column.len(), i + 2, "Hessenberg column has wrong length");
        let mut col = column.to_vec();
        for (k, &(c, s)) in self.rotations.iter().enumerate() {
            let (a, b) = (col[k], col[k + 1]);
            col[k] = c * a + s * b;
            col[k + 1] = -s * a + c * b;
        }
        let (a, b) = (col[i], col[i + 1]);
        let r = a.hypot(b);
        let (c, s) = if r == 0.0 { (1.0, 0.0) } else { (a / r, b / r) };
        col[i] = r;
        col.truncate(i + 1);
        self.rotations.push((c, s));
        let g = self.rhs[i];
        self.rhs[i] = c * g;
        self.rhs.push(-s * g);
        self.r_cols.push(col);
        self.residual()
    }

    pub fn residual(&self) -> f64 {
        self.rhs.last().map_or(0.0, |g| g.abs())
    }

    /// Least-squares coefficients `y_i`.
    pub fn solve(&self) -> Vec<f64> {
        let n = self.r_cols.len();
        let mut y = vec![0.0; n];
        for k in (0..n).rev() {
            let mut acc = self.rhs[k];
            for (j, yj) in y.iter().enumerate().skip(k + 1) {
                acc -= self.r_cols[j][k] * yj;
            }
            let d = self.r_cols[k][k];
            y[k] = if d == 0.0 { 0.0 } else { acc / d };
        }
        y
    }
}

/// Smallest singular value of a rectangular Hessenberg matrix.
pub fn hessenberg_min_singular(h: &DMatrix<f64>) -> f64 {
    h.clone().svd(false, false).singular_values.min()
}

fn hessenberg_matrix(cols: &[Vec<f64>]) -> DMatrix<f64> {
    let i = cols.len();
    DMatrix::from_fn(i + 1, i, |r, c| cols[c].get(r).copied().unwrap_or(0.0))
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Monitor called as `(iteration, current iterate)`; its value is stored as
/// that iteration's true residual.
pub type Monitor<'a> = &'a mut dyn FnMut(usize, &[f64]) -> Result<f64>;

/// Inexact GMRES(m). With `x0 = None` the initial residual is `b` exactly and
/// costs nothing.
pub fn igmres_solve<O: BudgetedOperator + ?Sized>(
    op: &mut O,
    b: &[f64],
    x0: Option<&[f64]>,
    options: &GmresOptions,
    mut monitor: Option<Monitor<'_>>,
) -> Result<SolveReport> {
    let m = options.restart;
    let tau = options.tau;
    if m == 0 || !(tau > 0.0) || !(options.s_init > 0.0) {
        return Err(DysonError::InvalidInput(format!(
            "invalid GMRES parameters: m = {m}, tau = {tau}, s = {}",
            options.s_init
        )));
    }
    let n = b.len();
    let b_norm = norm2(b);
    let max_iterations = options.max_iterations.unwrap_or(100 * m);
    let floor = BUDGET_FLOOR * b_norm;

    let mut report = SolveReport {
        solution: vec![0.0; n],
        converged: false,
        iterations: Vec::new(),
        initial_applications: Vec::new(),
        restarts: Vec::new(),
        est_res_history: Vec::new(),
        y_bound_checks: Vec::new(),
        final_est_res: 0.0,
        final_s: options.s_init,
        final_sigma: None,
        total_cost: 0,
        clamp_events: 0,
        arnoldi: None,
    };
    let mut x = match x0 {
        Some(x0) => {
            crate::error::check_len("initial guess", n, x0.len())?;
            x0.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut start_from_zero = x0.is_none() || x.iter().all(|v| *v == 0.0);
    let mut s = options.s_init;
    let mut applications = 0usize;
    let mut cycle = 0usize;

    loop {
        // initial residual of the cycle
        let r0 = if start_from_zero {
            b.to_vec()
        } else {
            let x_norm = norm2(&x);
            let unit: Vec<f64> = x.iter().map(|v| v / x_norm).collect();
            let budget = tau / (3.0 * x_norm);
            let (ax, cost) = op.apply(&unit, budget)?;
            report.initial_applications.push(InitialApplication {
                cycle,
                application: applications,
                budget: tau / 3.0,
                x0_norm: x_norm,
                cost,
            });
            applications += 1;
            report.total_cost += cost;
            b.iter().zip(&ax).map(|(bi, ai)| bi - x_norm * ai).collect()
        };
        start_from_zero = false;
        let beta = norm2(&r0);
        report.est_res_history.push(vec![beta]);
        report.final_est_res = beta;
        report.final_s = s;
        if beta == 0.0 || beta <= tau / 3.0 {
            report.solution = x;
            report.converged = true;
            return Ok(report);
        }

        let mut basis = vec![r0.iter().map(|v| v / beta).collect::<Vec<f64>>()];
        let mut products: Vec<Vec<f64>> = Vec::new();
        let mut h_cols: Vec<Vec<f64>> = Vec::new();
        let mut ls = GivensLs::new(beta);
        let mut est_prev = beta;

        for inner in 1..=m {
            if report.iterations.len() >= max_iterations {
                report.solution = x;
                return Err(DysonError::GmresNotConverged { report: Box::new(report) });
            }
            let raw_budget = s / (3.0 * m as f64) * tau / est_prev;
            let clamped = raw_budget < floor;
            let budget = raw_budget.max(floor);
            if clamped {
                report.clamp_events += 1;
            }
            let (w, cost) = op.apply(&basis[inner - 1], budget)?;
            crate::error::check_len("operator output", n, w.len())?;
            let application = applications;
            applications += 1;
            report.total_cost += cost;

            let mut v = w.clone();
            let mut col = vec![0.0; inner + 1];
            for _pass in 0..2 {
                for (j, q) in basis.iter().enumerate() {
                    let hij = dot(q, &v);
                    axpy(&mut v, -hij, q);
                    col[j] += hij;
                }
            }
            let h_next = norm2(&v);
            col[inner] = h_next;
            let est = ls.push_column(&col);
            h_cols.push(col);
            if options.keep_arnoldi {
                products.push(w);
            }
            let breakdown = h_next <= 1e-14 * norm2(&h_cols[inner - 1]);
            basis.push(if breakdown { vec![0.0; n] } else { v.iter().map(|x| x / h_next).collect() });
            let est = if breakdown { 0.0 } else { est };

            let global = report.iterations.len() + 1;
            let mut record = IterationRecord {
                iteration: global,
                cycle,
                inner,
                application,
                s,
                est_res_prev: est_prev,
                budget,
                budget_clamped: clamped,
                est_res: est,
                cost,
                true_res: None,
            };
            if let Some(mon) = monitor.as_mut() {
                if options.monitor_every > 0 && global % options.monitor_every == 0 {
                    let y = ls.solve();
                    let mut xi = x.clone();
                    for (yk, q) in y.iter().zip(&basis) {
                        axpy(&mut xi, *yk, q);
                    }
                    record.true_res = Some(mon(global, &xi)?);
                }
            }
            report.iterations.push(record);
            report.est_res_history.last_mut().expect("cycle history").push(est);
            report.final_est_res = est;
            est_prev = est;

            let converged_est = est <= tau / 3.0;
            if converged_est || inner == m {
                let h = hessenberg_matrix(&h_cols);
                let sigma = hessenberg_min_singular(&h);
                let y = ls.solve();
                let history = report.est_res_history.last().expect("cycle history");
                let max_ratio = y
                    .iter()
                    .enumerate()
                    .map(|(k, yk)| yk.abs() * sigma / history[k])
                    .fold(0.0, f64::max);
                report.y_bound_checks.push(YBoundCheck {
                    after_iteration: global,
                    sigma,
                    max_ratio,
                });
                for (yk, q) in y.iter().zip(&basis) {
                    axpy(&mut x, *yk, q);
                }
                report.final_sigma = Some(sigma);
                if options.keep_arnoldi {
                    report.arnoldi = Some(ArnoldiSnapshot {
                        products: std::mem::take(&mut products),
                        basis: basis.clone(),
                        hessenberg: h,
                    });
                }
                if converged_est && s <= sigma {
                    report.solution = x;
                    report.converged = true;
                    report.final_s = s;
                    return Ok(report);
                }
                let reason = if converged_est { RestartReason::SViolation } else { RestartReason::CycleFull };
                report.restarts.push(RestartRecord {
                    after_iteration: global,
                    reason,
                    s_old: s,
                    s_new: sigma,
                });
                s = sigma;
                report.final_s = s;
                break;
            }
        }
        cycle += 1;
    }
}

#[cfg(test)]
mod tests;
