//! `report.json`, `history.csv` and comparison tables.
//!
//! `history.csv` columns, in order: `iteration, cycle, est_res, true_res,
//! cum_ham, mean_cg_tol, mean_cg_iters, kv_norm, budget, bound_ratio`
//! (`true_res` and `bound_ratio` may be empty). `summary.csv` columns:
//! `strategy, converged, final_true_res, final_est_res, n_ham, rhs_ham, eta,
//! eta_rel, error`.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::harness::archive::write_atomic;
use crate::harness::config::ExperimentConfig;
use crate::harness::run::{Comparison, RunOutcome};
use crate::igmres::{RestartRecord, YBoundCheck};

pub const REPORT_VERSION: u32 = 1;

/// Notes attached to every report so readers know how counts were taken.
pub const N_HAM_NOTE: &str = "n_ham includes the Hamiltonian applications spent building the right-hand side (rhs_ham); true-residual recomputation is counted separately in verification_ham";

#[derive(Debug, Serialize)]
struct RunReport<'a> {
    format_version: u32,
    config: &'a ExperimentConfig,
    metrics: &'a crate::harness::run::RunMetrics,
    restarts: &'a [RestartRecord],
    y_bound_checks: &'a [YBoundCheck],
    final_s: f64,
    final_sigma: Option<f64>,
    note: &'static str,
}

#[derive(Debug, Serialize)]
struct ComparisonReport<'a> {
    format_version: u32,
    config: &'a ExperimentConfig,
    comparison: &'a Comparison,
    note: &'static str,
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub fn write_run(dir: &Path, config: &ExperimentConfig, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    let report = RunReport {
        format_version: REPORT_VERSION,
        config,
        metrics: &outcome.metrics,
        restarts: &outcome.report.restarts,
        y_bound_checks: &outcome.report.y_bound_checks,
        final_s: outcome.report.final_s,
        final_sigma: outcome.report.final_sigma,
        note: N_HAM_NOTE,
    };
    write_atomic(&dir.join("history.csv"), &csv_bytes(&outcome.metrics.history)?)?;
    write_atomic(&dir.join("report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(())
}

pub fn write_comparison(dir: &Path, config: &ExperimentConfig, comparison: &Comparison) -> Result<()> {
    fs::create_dir_all(dir)?;
    let report = ComparisonReport {
        format_version: REPORT_VERSION,
        config,
        comparison,
        note: N_HAM_NOTE,
    };
    write_atomic(&dir.join("summary.csv"), &csv_bytes(&comparison.rows)?)?;
    write_atomic(&dir.join("summary.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(())
}

/// Fixed-width table for terminal output.
pub fn format_comparison(comparison: &Comparison) -> String {
    let fmt_e = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2e}"));
    let mut out = format!(
        "{:<8} {:>10} {:>10} {:>10} {:>8} {:>8}  {}\n",
        "strategy", "true_res", "est_res", "n_ham", "rhs_ham", "eta_rel", "status"
    );
    for r in &comparison.rows {
        out.push_str(&format!(
            "{:<8} {:>10} {:>10} {:>10} {:>8} {:>8}  {}\n",
            r.strategy,
            fmt_e(r.final_true_res),
            fmt_e(r.final_est_res),
            r.n_ham.map_or("-".into(), |n| n.to_string()),
            r.rhs_ham.map_or("-".into(), |n| n.to_string()),
            r.eta_rel.map_or("-".into(), |e| format!("{e:.2}")),
            match (&r.error, r.converged) {
                (Some(e), _) => e.clone(),
                (None, true) => "converged".into(),
                (None, false) => "not converged".into(),
            }
        ));
    }
    out
}
