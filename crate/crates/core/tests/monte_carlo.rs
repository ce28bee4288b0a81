use bprelab_core::estimators::{
    as_rate_diagnostic, burkholder_sandwich, fit_decay, lp_norm, moment_estimate, BurkholderConstants,
};
use bprelab_core::exact::{p2_closed_forms, quenched_increment_sum};
use bprelab_core::simulate::{increment_identity_check, run, SimPlan, MAX_POP_CAP};
use bprelab_core::{EnvironmentModel, Mode, OffspringLaw, SimConfig, TrajectoryBatch};

fn gw() -> EnvironmentModel {
    EnvironmentModel::single(OffspringLaw::new([(0, 0.25), (2, 0.75)]).unwrap())
}

fn two_state() -> EnvironmentModel {
    EnvironmentModel::iid(
        vec![OffspringLaw::new([(1, 0.5), (3, 0.5)]).unwrap(), OffspringLaw::deterministic(2).unwrap()],
        vec![0.5, 0.5],
    )
    .unwrap()
}

fn gw_batch(replicas: usize, n_max: usize, seed: u64) -> TrajectoryBatch {
    run(SimConfig::new(gw(), Mode::Annealed, n_max, replicas, seed).with_rho_grid(vec![1.0, 1.05, 2.0])).unwrap()
}

#[test]
fn gw_mean_of_w10_is_one() {
    let batch = gw_batch(100_000, 10, 11);
    let est = moment_estimate(&batch, 1.0, 10).unwrap();
    let sd = (1.0 - (2.0f64 / 3.0).powi(10)).sqrt() / (1e5f64).sqrt();
    assert!((est.value - 1.0).abs() < 4.0 * sd, "mean W_10 = {}", est.value);
}

#[test]
fn gw_l2_distance_matches_tail_difference() {
    let batch = gw_batch(100_000, 22, 12);
    let cf = p2_closed_forms(&gw()).unwrap();
    for n in [0, 2] {
        let est = lp_norm(&batch, 2.0, n, 20).unwrap();
        let target = cf.tail(n).unwrap() - cf.tail(n + 20).unwrap();
        assert!((est.value - target).abs() < 4.0 * est.stderr, "n = {n}: {} vs {target}", est.value);
    }
}

#[test]
fn gw_decay_fit_covers_annealed_critical_rate() {
    let batch = gw_batch(100_000, 30, 3);
    let cf = p2_closed_forms(&gw()).unwrap();
    let est: Vec<_> = (0..=10)
        .map(|n| lp_norm(&batch, 2.0, n, 20).unwrap().with_bias_bound(cf.tail(n + 20).unwrap()))
        .collect();
    let fit = fit_decay(&est).unwrap();
    assert!(fit.ci_contains(1.5f64.sqrt()), "{fit:?}");
    assert!(fit.ci_width() < 0.08, "{fit:?}");
}

#[test]
fn quenched_increments_have_zero_mean() {
    let cfg = SimConfig::new(two_state(), Mode::Quenched { path_seed: 5 }, 12, 20_000, 9);
    let batch = run(cfg).unwrap();
    for n in 0..12 {
        let diffs: Vec<f64> = batch.uncapped().map(|i| batch.w(i)[n + 1] - batch.w(i)[n]).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let per = diffs.len() / 30;
        let bm: Vec<f64> = diffs.chunks(per).take(30).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        let bmean = bm.iter().sum::<f64>() / 30.0;
        let se = (bm.iter().map(|x| (x - bmean).powi(2)).sum::<f64>() / 29.0 / 30.0).sqrt();
        assert!(mean.abs() <= 4.0 * se + 1e-15, "n = {n}: {mean} vs se {se}");
    }
}

#[test]
fn quenched_l2_distance_matches_path_oracle() {
    let cfg = SimConfig::new(two_state(), Mode::Quenched { path_seed: 21 }, 16, 50_000, 4).with_pop_cap(MAX_POP_CAP);
    let batch = run(cfg).unwrap();
    let path = batch.shared_path().unwrap();
    for n in [0, 3, 6] {
        let est = lp_norm(&batch, 2.0, n, 10).unwrap();
        let target = quenched_increment_sum(path, n, n + 10).unwrap();
        assert!((est.value - target).abs() < 4.0 * est.stderr, "n = {n}: {} vs {target}", est.value);
    }
}

#[test]
fn raising_the_cap_leaves_uncapped_replicas_alone() {
    let cfg = SimConfig::new(gw(), Mode::Annealed, 25, 2_000, 8).with_pop_cap(1000);
    let low = run(cfg.clone()).unwrap();
    let high = run(cfg.with_pop_cap(MAX_POP_CAP)).unwrap();
    assert!(low.capped_count() > 0);
    for i in low.uncapped() {
        assert_eq!(low.w(i), high.w(i));
        assert_eq!(low.status(i), high.status(i));
    }
}

#[test]
fn out_of_order_execution_is_bit_identical() {
    let cfg = SimConfig::new(two_state(), Mode::Annealed, 10, 500, 77).with_rho_grid(vec![1.0, 1.3]);
    let sequential = run(cfg.clone()).unwrap();
    let plan = SimPlan::new(cfg).unwrap();
    let mut out: Vec<_> = (0..500).rev().map(|i| (i, plan.replica(i))).collect();
    out.sort_by_key(|(i, _)| *i);
    let assembled = TrajectoryBatch::assemble(plan, out.into_iter().map(|(_, r)| r).collect()).unwrap();
    assert_eq!(sequential, assembled);
}

#[test]
fn sandwich_verdict_ignores_replica_order() {
    let batch = gw_batch(5_000, 10, 6);
    let cfg = batch.config().clone();
    let n_w = cfg.n_max + 1;
    let n_a = cfg.n_max * cfg.rho_grid.len();
    let order: Vec<usize> = (0..cfg.replicas).map(|i| (i * 7919) % cfg.replicas).collect();
    let w: Vec<f64> = order.iter().flat_map(|&i| batch.w_column()[i * n_w..(i + 1) * n_w].to_vec()).collect();
    let a: Vec<f64> = order.iter().flat_map(|&i| batch.a_hat_column()[i * n_a..(i + 1) * n_a].to_vec()).collect();
    let status = order.iter().map(|&i| batch.status(i)).collect();
    let shuffled = TrajectoryBatch::from_raw_parts(cfg, None, w, a, status).unwrap();
    for p in [1.5, 3.0] {
        for rho in [1.0, 1.05] {
            let c = BurkholderConstants::for_p(p);
            let x = burkholder_sandwich(&batch, p, rho, 8, c, 4.0).unwrap();
            let y = burkholder_sandwich(&shuffled, p, rho, 8, c, 4.0).unwrap();
            assert!(x.holds && y.holds);
            assert!((x.martingale_norm - y.martingale_norm).abs() < 1e-12 * x.martingale_norm);
            assert!((x.quadratic_norm - y.quadratic_norm).abs() < 1e-12 * x.quadratic_norm);
        }
    }
}

#[test]
fn corrupted_constant_breaks_the_sandwich() {
    let batch = gw_batch(5_000, 10, 6);
    let bad = BurkholderConstants { a: 50.0, ..BurkholderConstants::for_p(2.0) };
    assert!(!burkholder_sandwich(&batch, 2.0, 1.0, 8, bad, 4.0).unwrap().holds);
}

#[test]
fn identity_residual_is_roundoff() {
    let batch = gw_batch(5_000, 10, 2);
    for (rho, n, big_n) in [(2.0, 3, 8), (1.05, 0, 10), (2.0, 7, 10)] {
        assert!(increment_identity_check(&batch, rho, n, big_n).unwrap() < 1e-9);
    }
}

#[test]
fn as_rate_diagnostic_flags_both_sides() {
    let batch = gw_batch(20_000, 30, 13);
    let ok = as_rate_diagnostic(&batch, 1.5, 1.5, 0.5, 10).unwrap();
    assert!(ok.consistent, "{:?}", ok.median_by_n);
    // epsilon = -2.5 gives rate 1.5^{1/0.5} = 2.25, faster than the true decay
    let bad = as_rate_diagnostic(&batch, 1.5, 1.5, -2.5, 10).unwrap();
    assert!(!bad.consistent, "{:?}", bad.median_by_n);
}
