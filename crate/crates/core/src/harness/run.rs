//! Response runs: right-hand side, budgeted dielectric operator, inexact GMRES
//! and the metrics reported for each strategy.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{DysonError, Result};
use crate::groundstate::{run_scf, GroundState};
use crate::harness::config::ExperimentConfig;
use crate::harness::perturbation::build_perturbation;
use crate::igmres::{igmres_solve, SolveReport};
use crate::kernels::{Kerker, Kernel};
use crate::pwbasis::norm2;
use crate::response::{
    apply_chi0, apply_dielectric_with, dielectric_error_bound, orbital_row_norm, orbital_row_norm_real,
};
use crate::sternheimer::SternheimerOptions;
use crate::strategies::{select_tolerances, StrategyKind, StrategySpec, ToleranceContext, MIN_TOLERANCE};

/// Sternheimer tolerance used for true-residual recomputation.
pub const TRUE_RESIDUAL_TOLERANCE: f64 = 1e-16;

/// Runs the SCF described by `config`.
pub fn prepare(config: &ExperimentConfig) -> Result<GroundState> {
    config.validate()?;
    let gs = run_scf(&config.model, &config.scf_options())?;
    gs.check_invariants()?;
    Ok(gs)
}

/// Quantities shared by every response run on one ground state.
#[derive(Debug, Clone)]
pub struct ResponseContext<'a> {
    pub gs: &'a GroundState,
    pub kernel: Kernel,
    /// `‖Re(F⁻¹Φ)‖_{2,∞}`, fed to `grt`.
    pub row_norm_real: f64,
    /// `‖F⁻¹Φ‖_{2,∞}`, fed to the error bound.
    pub row_norm: f64,
    /// `ε_{N_occ+1} − ε_n`.
    pub eps_gap: Vec<f64>,
    pub delta_v: Vec<f64>,
}

impl<'a> ResponseContext<'a> {
    pub fn new(gs: &'a GroundState, config: &ExperimentConfig) -> Result<Self> {
        let grids = gs.grids();
        let delta_v = build_perturbation(gs.model(), grids, &config.perturbation)?;
        let gap_ref = gs.eps_gap_ref();
        Ok(Self {
            gs,
            kernel: Kernel::new(gs.model().xc, gs.rho()),
            row_norm_real: orbital_row_norm_real(grids, gs.phi())?,
            row_norm: orbital_row_norm(grids, gs.phi())?,
            eps_gap: gs.eps()[..gs.n_occ()].iter().map(|e| gap_ref - e).collect(),
            delta_v,
        })
    }

    fn tolerance_context(&self, budget: f64, kv_norm: Option<f64>, rhs_norm: Option<f64>) -> ToleranceContext<'_> {
        let grids = self.gs.grids();
        ToleranceContext {
            budget,
            kv_norm,
            row_norm: Some(self.row_norm_real),
            volume: grids.volume(),
            n_g: grids.n_g(),
            occ: self.gs.occ(),
            rhs_norm,
            eps_gap: Some(&self.eps_gap),
        }
    }
}

/// `δρ₀ = χ₀ δV₀` and what it cost.
#[derive(Debug, Clone, PartialEq)]
pub struct RightHandSide {
    pub rhs: Vec<f64>,
    pub tolerances: Vec<f64>,
    pub ham_applications: u64,
}

/// Builds `δρ₀` at the tolerances of the initial application: `C_{0,n} τ/3` for
/// adaptive strategies (with `‖δV₀‖` in place of `‖Kv‖`), the static tolerance
/// otherwise. `d10n` uses `τ/10` since `‖δρ₀‖` is not known yet.
pub fn build_rhs(ctx: &ResponseContext<'_>, spec: &StrategySpec) -> Result<RightHandSide> {
    let n_occ = ctx.gs.n_occ();
    let dv_norm = norm2(&ctx.delta_v);
    if dv_norm == 0.0 {
        return Ok(RightHandSide {
            rhs: vec![0.0; ctx.gs.grids().n_g()],
            tolerances: vec![],
            ham_applications: 0,
        });
    }
    let tolerances = match spec.kind {
        StrategyKind::D10n => vec![(spec.tau / 10.0).max(MIN_TOLERANCE); n_occ],
        _ => select_tolerances(spec, &ctx.tolerance_context(spec.tau / 3.0, Some(dv_norm), Some(1.0)))?,
    };
    let out = apply_chi0(ctx.gs, &ctx.delta_v, &tolerances, &run_sternheimer_options())?;
    Ok(RightHandSide {
        rhs: out.delta_rho,
        tolerances,
        ham_applications: out.stats.ham_applications,
    })
}

fn run_sternheimer_options() -> SternheimerOptions {
    SternheimerOptions {
        max_iter: None,
        allow_unconverged: true,
    }
}

/// Per-application record of the dielectric operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationStats {
    pub budget: f64,
    pub kv_norm: f64,
    pub mean_cg_tol: f64,
    pub mean_cg_iters: f64,
    pub ham_applications: u64,
    /// `dielectric_error_bound / budget`; above 1 the bound does not certify the budget.
    pub bound_ratio: Option<f64>,
    pub unconverged_bands: usize,
}

/// `‖b − E x‖` with every Sternheimer solve at [`TRUE_RESIDUAL_TOLERANCE`],
/// and the Hamiltonian applications it took.
pub fn true_residual_with_cost(gs: &GroundState, kernel: &Kernel, x: &[f64], b: &[f64]) -> Result<(f64, u64)> {
    let tight = vec![TRUE_RESIDUAL_TOLERANCE; gs.n_occ()];
    let ex = apply_dielectric_with(gs, kernel, x, |_| Ok(tight), &run_sternheimer_options())?;
    let r: Vec<f64> = b.iter().zip(&ex.output).map(|(bi, ei)| bi - ei).collect();
    Ok((norm2(&r), ex.ham_applications))
}

pub fn true_residual(gs: &GroundState, kernel: &Kernel, x: &[f64], b: &[f64]) -> Result<f64> {
    Ok(true_residual_with_cost(gs, kernel, x, b)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub cycle: usize,
    pub est_res: f64,
    pub true_res: Option<f64>,
    pub cum_ham: u64,
    pub mean_cg_tol: f64,
    pub mean_cg_iters: f64,
    pub kv_norm: f64,
    pub budget: f64,
    pub bound_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub strategy: String,
    pub tau: f64,
    pub m: usize,
    pub converged: bool,
    /// `rhs_ham + gmres_ham`.
    pub n_ham: u64,
    pub rhs_ham: u64,
    pub gmres_ham: u64,
    /// Spent on true-residual recomputation; not part of `n_ham`.
    pub verification_ham: u64,
    pub iterations: usize,
    pub restarts: usize,
    pub rhs_norm: f64,
    pub final_est_res: f64,
    pub final_true_res: f64,
    pub true_res_0: f64,
    pub eta: f64,
    pub max_y_ratio: f64,
    pub clamp_events: usize,
    pub unconverged_cg_solves: usize,
    pub first_mean_cg_iters: Option<f64>,
    pub last_mean_cg_iters: Option<f64>,
    pub history: Vec<HistoryRow>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub report: SolveReport,
    pub rhs: Vec<f64>,
    pub applications: Vec<ApplicationStats>,
}

/// `−log₁₀(r_end / r_0) / N^Ham`.
pub fn efficiency(final_true_res: f64, true_res_0: f64, n_ham: u64) -> f64 {
    if n_ham == 0 || true_res_0 == 0.0 {
        return 0.0;
    }
    -(final_true_res.max(f64::MIN_POSITIVE) / true_res_0).log10() / n_ham as f64
}

/// Solves the (optionally Kerker-preconditioned) Dyson equation with `spec`.
/// Non-convergence is returned as an error carrying the partial report.
pub fn run_response(ctx: &ResponseContext<'_>, config: &ExperimentConfig, spec: &StrategySpec) -> Result<RunOutcome> {
    run_response_inner(ctx, config, spec).map_err(|(e, _)| e)
}

/// Like [`run_response`] but also returns the partial outcome on GMRES failure.
pub fn run_response_partial(
    ctx: &ResponseContext<'_>,
    config: &ExperimentConfig,
    spec: &StrategySpec,
) -> std::result::Result<RunOutcome, (DysonError, Option<RunOutcome>)> {
    run_response_inner(ctx, config, spec)
}

fn run_response_inner(
    ctx: &ResponseContext<'_>,
    config: &ExperimentConfig,
    spec: &StrategySpec,
) -> std::result::Result<RunOutcome, (DysonError, Option<RunOutcome>)> {
    let gs = ctx.gs;
    let grids = gs.grids();
    let counter = gs.counter();
    let kerker = if spec.preconditioned {
        Some(Kerker::new(config.kerker_alpha).map_err(|e| (e, None))?)
    } else {
        None
    };
    let rhs = build_rhs(ctx, spec).map_err(|e| (e, None))?;
    let rhs_norm = norm2(&rhs.rhs);
    let b_solve = match &kerker {
        Some(k) => k.apply(grids, &rhs.rhs).map_err(|e| (e, None))?,
        None => rhs.rhs.clone(),
    };

    let applications: RefCell<Vec<ApplicationStats>> = RefCell::new(Vec::new());
    let mut operator = |v: &[f64], budget: f64| -> Result<(Vec<f64>, u64)> {
        let select = |kv: f64| select_tolerances(spec, &ctx.tolerance_context(budget, Some(kv), Some(rhs_norm)));
        let app = apply_dielectric_with(gs, &ctx.kernel, v, select, &run_sternheimer_options())?;
        let out = match &kerker {
            Some(k) => k.apply(grids, &app.output)?,
            None => app.output,
        };
        let n = app.cg_iterations_per_band.len().max(1) as f64;
        let bound_ratio = if app.tolerances_used.is_empty() {
            None
        } else {
            Some(dielectric_error_bound(gs, app.kv_norm, ctx.row_norm, &app.tolerances_used)? / budget)
        };
        applications.borrow_mut().push(ApplicationStats {
            budget,
            kv_norm: app.kv_norm,
            mean_cg_tol: if app.tolerances_used.is_empty() {
                0.0
            } else {
                app.tolerances_used.iter().sum::<f64>() / app.tolerances_used.len() as f64
            },
            mean_cg_iters: app.cg_iterations_per_band.iter().sum::<usize>() as f64 / n,
            ham_applications: app.ham_applications,
            bound_ratio,
            unconverged_bands: app
                .cg_residuals_per_band
                .iter()
                .zip(&app.tolerances_used)
                .filter(|(r, t)| r > t)
                .count(),
        });
        Ok((out, app.ham_applications))
    };

    let verification = std::cell::Cell::new(0u64);
    let mut monitor = |_: usize, x: &[f64]| -> Result<f64> {
        let (r, cost) = true_residual_with_cost(gs, &ctx.kernel, x, &rhs.rhs)?;
        verification.set(verification.get() + cost);
        Ok(r)
    };
    let options = config.gmres_options();
    let use_monitor = options.monitor_every > 0;
    let before = counter.get();
    let solved = igmres_solve(
        &mut operator,
        &b_solve,
        None,
        &spec_options(options, spec),
        if use_monitor { Some(&mut monitor) } else { None },
    );
    let during = counter.get() - before;

    let (report, failure) = match solved {
        Ok(r) => (r, None),
        Err(DysonError::GmresNotConverged { report }) => {
            let copy = (*report).clone();
            (copy, Some(DysonError::GmresNotConverged { report }))
        }
        Err(e) => return Err((e, None)),
    };
    let gmres_ham = report.total_cost;
    if during != gmres_ham + verification.get() {
        let e = DysonError::Invariant(format!(
            "Hamiltonian counter moved by {during} but GMRES reports {gmres_ham} (+{} verification)",
            verification.get()
        ));
        return Err((e, None));
    }

    let (final_true_res, final_cost) =
        true_residual_with_cost(gs, &ctx.kernel, &report.solution, &rhs.rhs).map_err(|e| (e, None))?;
    let applications = applications.into_inner();
    let outcome = assemble(
        spec,
        &rhs,
        rhs_norm,
        report,
        applications,
        final_true_res,
        verification.get() + final_cost,
    );
    match failure {
        None => Ok(outcome),
        Some(e) => Err((e, Some(outcome))),
    }
}

fn spec_options(mut options: crate::igmres::GmresOptions, spec: &StrategySpec) -> crate::igmres::GmresOptions {
    options.tau = spec.tau;
    options.restart = spec.m;
    options
}

fn assemble(
    spec: &StrategySpec,
    rhs: &RightHandSide,
    rhs_norm: f64,
    report: SolveReport,
    applications: Vec<ApplicationStats>,
    final_true_res: f64,
    verification_ham: u64,
) -> RunOutcome {
    // cumulative cost per application index, right-hand side included
    let mut cum = Vec::with_capacity(applications.len());
    let mut total = rhs.ham_applications;
    for a in &applications {
        total += a.ham_applications;
        cum.push(total);
    }
    let history: Vec<HistoryRow> = report
        .iterations
        .iter()
        .map(|it| {
            let a = &applications[it.application];
            HistoryRow {
                iteration: it.iteration,
                cycle: it.cycle,
                est_res: it.est_res,
                true_res: it.true_res,
                cum_ham: cum[it.application],
                mean_cg_tol: a.mean_cg_tol,
                mean_cg_iters: a.mean_cg_iters,
                kv_norm: a.kv_norm,
                budget: a.budget,
                bound_ratio: a.bound_ratio,
            }
        })
        .collect();
    let gmres_ham = report.total_cost;
    let n_ham = rhs.ham_applications + gmres_ham;
    let true_res_0 = rhs_norm;
    let metrics = RunMetrics {
        strategy: spec.label(),
        tau: spec.tau,
        m: spec.m,
        converged: report.converged,
        n_ham,
        rhs_ham: rhs.ham_applications,
        gmres_ham,
        verification_ham,
        iterations: report.iterations.len(),
        restarts: report.restarts.len(),
        rhs_norm,
        final_est_res: report.final_est_res,
        final_true_res,
        true_res_0,
        eta: efficiency(final_true_res, true_res_0, n_ham),
        max_y_ratio: report.max_y_ratio(),
        clamp_events: report.clamp_events,
        unconverged_cg_solves: applications.iter().map(|a| a.unconverged_bands).sum(),
        first_mean_cg_iters: history.first().map(|h| h.mean_cg_iters),
        last_mean_cg_iters: history.last().map(|h| h.mean_cg_iters),
        history,
    };
    RunOutcome {
        metrics,
        report,
        rhs: rhs.rhs.clone(),
        applications,
    }
}

/// One row of a strategy comparison; failures keep their message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub converged: bool,
    pub final_true_res: Option<f64>,
    pub final_est_res: Option<f64>,
    pub n_ham: Option<u64>,
    pub rhs_ham: Option<u64>,
    pub eta: Option<f64>,
    pub eta_rel: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reference: Option<String>,
    pub tau: f64,
    pub rows: Vec<ComparisonRow>,
    #[serde(skip)]
    pub runs: Vec<Option<RunMetrics>>,
}

/// Runs every strategy on the same ground state; `η_rel` references `d10`
/// (or `pd10` when only the preconditioned baseline is present).
pub fn compare_strategies(ctx: &ResponseContext<'_>, config: &ExperimentConfig, names: &[String]) -> Result<Comparison> {
    let specs = names.iter().map(|n| config.strategy_named(n)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for spec in &specs {
        match run_response_partial(ctx, config, spec) {
            Ok(out) => {
                rows.push(row_from(&out.metrics, None));
                runs.push(Some(out.metrics));
            }
            Err((e, partial)) => {
                match &partial {
                    Some(out) => rows.push(row_from(&out.metrics, Some(e.to_string()))),
                    None => rows.push(ComparisonRow {
                        strategy: spec.label(),
                        converged: false,
                        final_true_res: None,
                        final_est_res: None,
                        n_ham: None,
                        rhs_ham: None,
                        eta: None,
                        eta_rel: None,
                        error: Some(e.to_string()),
                    }),
                }
                runs.push(partial.map(|o| o.metrics));
            }
        }
    }
    let reference = ["d10", "pd10"]
        .iter()
        .find_map(|r| rows.iter().find(|row| row.strategy == *r && row.eta.is_some()))
        .map(|row| (row.strategy.clone(), row.eta.expect("reference eta")));
    if let Some((_, eta_ref)) = &reference {
        for row in &mut rows {
            row.eta_rel = row.eta.map(|e| e / eta_ref);
        }
    }
    Ok(Comparison {
        reference: reference.map(|r| r.0),
        tau: config.tau,
        rows,
        runs,
    })
}

fn row_from(m: &RunMetrics, error: Option<String>) -> ComparisonRow {
    ComparisonRow {
        strategy: m.strategy.clone(),
        converged: m.converged,
        final_true_res: Some(m.final_true_res),
        final_est_res: Some(m.final_est_res),
        n_ham: Some(m.n_ham),
        rhs_ham: Some(m.rhs_ham),
        eta: Some(m.eta),
        eta_rel: None,
        error,
    }
}
