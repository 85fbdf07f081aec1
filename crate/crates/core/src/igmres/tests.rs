use super::*;
use nalgebra::{DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn well_conditioned(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let scale = 0.6 / (n as f64).sqrt();
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } + scale * rng.gen_range(-1.0..1.0))
}

fn matvec(a: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (a * DVector::from_column_slice(v)).iter().cloned().collect()
}

fn exact_op(a: &DMatrix<f64>) -> impl FnMut(&[f64], f64) -> Result<(Vec<f64>, u64)> + '_ {
    move |v, _| Ok((matvec(a, v), 1))
}

fn true_residual(a: &DMatrix<f64>, b: &[f64], x: &[f64]) -> f64 {
    let ax = matvec(a, x);
    norm2(&b.iter().zip(&ax).map(|(p, q)| p - q).collect::<Vec<_>>())
}

#[test]
fn identity_converges_in_one_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = random_vec(30, &mut rng);
    let mut op = |v: &[f64], _: f64| Ok((v.to_vec(), 1));
    let r = igmres_solve(&mut op, &b, None, &GmresOptions::new(10, 1e-10), None).unwrap();
    assert!(r.converged);
    assert_eq!(r.iterations.len(), 1);
    for (x, y) in r.solution.iter().zip(&b) {
        assert!((x - y).abs() < 1e-14);
    }
}

#[test]
fn zero_rhs_returns_zero_without_iterations() {
    let mut calls = 0;
    let mut op = |v: &[f64], _: f64| {
        calls += 1;
        Ok((v.to_vec(), 1))
    };
    let r = igmres_solve(&mut op, &[0.0; 8], None, &GmresOptions::new(5, 1e-9), None).unwrap();
    assert!(r.converged && r.iterations.is_empty());
    assert!(r.solution.iter().all(|x| *x == 0.0));
    assert_eq!(calls, 0);
}

#[test]
fn matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = well_conditioned(50, &mut rng);
    let b = random_vec(50, &mut rng);
    let tau = 1e-10;
    let r = igmres_solve(&mut exact_op(&a), &b, None, &GmresOptions::new(10, tau), None).unwrap();
    assert!(true_residual(&a, &b, &r.solution) <= tau);
    let direct = a.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
    let err: f64 = r.solution.iter().zip(direct.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let cond_bound = tau / a.clone().svd(false, false).singular_values.min();
    assert!(err <= cond_bound * 1.01);
}

#[test]
fn nonzero_initial_guess_is_charged() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = well_conditioned(40, &mut rng);
    let b = random_vec(40, &mut rng);
    let x0 = random_vec(40, &mut rng);
    let r = igmres_solve(&mut exact_op(&a), &b, Some(&x0), &GmresOptions::new(8, 1e-9), None).unwrap();
    assert!(r.converged);
    assert!(!r.initial_applications.is_empty());
    assert_eq!(r.initial_applications[0].budget, 1e-9 / 3.0);
    assert!(true_residual(&a, &b, &r.solution) <= 1e-9);
}

/// Operator that injects an error of norm exactly equal to the budget.
fn adversarial<'a>(a: &'a DMatrix<f64>, rng: &'a mut ChaCha8Rng) -> impl FnMut(&[f64], f64) -> Result<(Vec<f64>, u64)> + 'a {
    move |v, budget| {
        let mut w = matvec(a, v);
        let e = random_vec(w.len(), rng);
        let en = norm2(&e);
        for (wi, ei) in w.iter_mut().zip(&e) {
            *wi += budget * ei / en;
        }
        Ok((w, 1))
    }
}

#[test]
fn adversarial_errors_still_meet_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0;
    for trial in 0..100 {
        let n = 50 + (trial * 150) / 99;
        let a = well_conditioned(n, &mut rng);
        let b = random_vec(n, &mut rng);
        let tau = 10f64.powf(-rng.gen_range(4.0..10.0));
        let m = [5, 10, 20][trial % 3];
        let mut noise = ChaCha8Rng::seed_from_u64(1000 + trial as u64);
        let mut op = adversarial(&a, &mut noise);
        let r = igmres_solve(&mut op, &b, None, &GmresOptions::new(m, tau), None).unwrap();
        if true_residual(&a, &b, &r.solution) > tau {
            violations += 1;
        }
        assert!(r.max_y_ratio() <= 1.0 + 1e-10);
    }
    assert_eq!(violations, 0);
}

#[test]
fn residual_gap_identity_and_orthonormal_basis() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = well_conditioned(60, &mut rng);
    let b = random_vec(60, &mut rng);
    let mut noise = ChaCha8Rng::seed_from_u64(6);
    let mut op = adversarial(&a, &mut noise);
    let opts = GmresOptions { keep_arnoldi: true, ..GmresOptions::new(30, 1e-8) };
    let r = igmres_solve(&mut op, &b, None, &opts, None).unwrap();
    let snap = r.arnoldi.as_ref().unwrap();
    let i = snap.products.len();
    let w = DMatrix::from_fn(60, i, |r, c| snap.products[c][r]);
    let v = DMatrix::from_fn(60, i + 1, |r, c| snap.basis[c][r]);
    let gap = (&w - &v * &snap.hessenberg).norm();
    assert!(gap <= 1e-10 * snap.hessenberg.norm());
    let vtv = v.transpose() * &v;
    assert!((vtv - DMatrix::identity(i + 1, i + 1)).amax() < 1e-12);
}

#[test]
fn estimated_residual_monotone_and_budget_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = well_conditioned(80, &mut rng);
    let b = random_vec(80, &mut rng);
    let mut noise = ChaCha8Rng::seed_from_u64(8);
    let mut op = adversarial(&a, &mut noise);
    let opts = GmresOptions::new(4, 1e-10);
    let r = igmres_solve(&mut op, &b, None, &opts, None).unwrap();
    assert!(!r.restarts.is_empty());
    for cycle in &r.est_res_history {
        assert!(cycle.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }
    for it in &r.iterations {
        let formula = it.s / (3.0 * opts.restart as f64) * opts.tau / it.est_res_prev;
        if !it.budget_clamped {
            assert_eq!(it.budget.to_bits(), formula.to_bits());
        }
    }
}

#[test]
fn s_violation_triggers_restart() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // small singular values force s = 1 to be an overestimate
    let a = DMatrix::from_fn(30, 30, |i, j| if i == j { 0.05 + 0.01 * i as f64 } else { 0.0 });
    let b = random_vec(30, &mut rng);
    let r = igmres_solve(&mut exact_op(&a), &b, None, &GmresOptions::new(40, 1e-8), None).unwrap();
    assert!(r.restarts.iter().any(|x| x.reason == RestartReason::SViolation));
    assert!(r.final_s <= r.final_sigma.unwrap());
    assert!(true_residual(&a, &b, &r.solution) <= 1e-8);
}

#[test]
fn iteration_cap_reports_failure() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let a = well_conditioned(40, &mut rng);
    let b = random_vec(40, &mut rng);
    let opts = GmresOptions { max_iterations: Some(3), ..GmresOptions::new(2, 1e-14) };
    let mut op = exact_op(&a);
    let result = igmres_solve(&mut op, &b, None, &opts, None);
    match result {
        Err(DysonError::GmresNotConverged { report }) => assert_eq!(report.iterations.len(), 3),
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn monitor_receives_current_iterate() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = well_conditioned(40, &mut rng);
    let b = random_vec(40, &mut rng);
    let mut seen = Vec::new();
    let mut mon = |k: usize, x: &[f64]| {
        let t = true_residual(&a, &b, x);
        seen.push(k);
        Ok(t)
    };
    let opts = GmresOptions { monitor_every: 2, ..GmresOptions::new(10, 1e-10) };
    let mut op = exact_op(&a);
    let r = igmres_solve(&mut op, &b, None, &opts, Some(&mut mon)).unwrap();
    drop(mon);
    assert!(seen.iter().all(|k| k % 2 == 0));
    for it in &r.iterations {
        if let Some(t) = it.true_res {
            // exact operator: estimated and true residual agree
            assert!((t - it.est_res).abs() <= 1e-12 * norm2(&b));
        }
    }
}

#[test]
fn givens_closed_form_single_column() {
    let (a, h, beta) = (3.0, 4.0, 2.0);
    let mut ls = GivensLs::new(beta);
    let r = ls.push_column(&[a, h]);
    assert!((r - h.abs() * beta / (a * a + h * h as f64).sqrt()).abs() < 1e-15);
}

#[test]
fn givens_matches_dense_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let k = 12;
    let beta = 1.7;
    let mut cols = Vec::new();
    let mut ls = GivensLs::new(beta);
    for i in 0..k {
        let col: Vec<f64> = (0..i + 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let est = ls.push_column(&col);
        cols.push(col);
        let h = hessenberg_matrix(&cols);
        let mut rhs = DVector::zeros(i + 2);
        rhs[0] = beta;
        let svd = h.clone().svd(true, true);
        let y = svd.solve(&rhs, 1e-14).unwrap();
        let res = (&rhs - &h * &y).norm();
        assert!((est - res).abs() <= 1e-12 * res.max(1e-300) + 1e-14);
        let y_g = ls.solve();
        for (a, b) in y_g.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }
}

#[test]
fn givens_breakdown_gives_zero_residual() {
    let mut ls = GivensLs::new(1.0);
    ls.push_column(&[1.0, 0.5]);
    let r = ls.push_column(&[0.3, 2.0, 0.0]);
    assert!(r.abs() < 1e-15);
}

#[test]
fn min_singular_values() {
    assert_eq!(hessenberg_min_singular(&DMatrix::from_row_slice(2, 1, &[2.0, 0.0])), 2.0);
    let mut padded = DMatrix::zeros(6, 5);
    for i in 0..5 {
        padded[(i, i)] = 1.0;
    }
    assert!((hessenberg_min_singular(&padded) - 1.0).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h = DMatrix::from_fn(21, 20, |r, c| if r <= c + 1 { rng.gen_range(-1.0..1.0) } else { 0.0 });
    let gram = h.transpose() * &h;
    let ev: DVector<f64> = SymmetricEigen::new(gram).eigenvalues;
    let oracle = ev.min().max(0.0).sqrt();
    assert!((hessenberg_min_singular(&h) - oracle).abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn guarantee_holds_for_random_systems(seed in 0u64..10_000, m in 2usize..15, log_tau in 4.0f64..11.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = well_conditioned(40, &mut rng);
        let b = random_vec(40, &mut rng);
        let tau = 10f64.powf(-log_tau);
        let mut noise = ChaCha8Rng::seed_from_u64(seed + 1);
        let mut op = adversarial(&a, &mut noise);
        let r = igmres_solve(&mut op, &b, None, &GmresOptions::new(m, tau), None).unwrap();
        prop_assert!(true_residual(&a, &b, &r.solution) <= tau);
        for cycle in &r.est_res_history {
            prop_assert!(cycle.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        }
    }
}
