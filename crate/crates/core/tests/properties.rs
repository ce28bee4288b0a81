use bprelab_core::estimators::fit_decay;
use bprelab_core::offspring::{cumulants_from_moments, moments_from_cumulants};
use bprelab_core::rates::{annealed_rates, critical_rate_conditions, gl_criterion, quenched_bounds, rate_report};
use bprelab_core::{EnvironmentModel, LpEstimate, OffspringLaw};
use proptest::prelude::*;

fn law_strategy(max_k: usize) -> impl Strategy<Value = OffspringLaw> {
    prop::collection::vec(0.0f64..1.0, 2..=max_k + 1).prop_filter_map("needs positive mean", |mut w| {
        let last = w.len() - 1;
        w[last] += 0.01;
        let total: f64 = w.iter().sum();
        let probs: Vec<f64> = w.iter().map(|x| x / total).collect();
        OffspringLaw::from_probs(&probs).ok()
    })
}

fn mixture_strategy() -> impl Strategy<Value = EnvironmentModel> {
    prop::collection::vec((law_strategy(6), 0.05f64..1.0), 1..=4).prop_map(|items| {
        let total: f64 = items.iter().map(|(_, w)| w).sum();
        let (states, weights): (Vec<_>, Vec<_>) = items.into_iter().map(|(l, w)| (l, w / total)).unzip();
        EnvironmentModel::iid(states, weights).unwrap()
    })
}

fn supercritical_mixture() -> impl Strategy<Value = EnvironmentModel> {
    mixture_strategy().prop_filter("supercritical", |env| env.expected_log_mean().unwrap() > 0.05)
}

proptest! {
    #[test]
    fn first_moment_is_mean(law in law_strategy(8)) {
        prop_assert_eq!(law.moment(1.0), law.mean());
    }

    #[test]
    fn moment_dominates_mean_power(law in law_strategy(8), p in 1.0f64..6.0) {
        let m = law.mean();
        prop_assert!(law.moment(p) >= m.powf(p) * (1.0 - 1e-12));
    }

    #[test]
    fn centered_norm_is_monotone_in_p(law in law_strategy(8), p in 1.0f64..5.0, dp in 0.0f64..3.0) {
        let lo = law.centered_abs_moment(p).powf(1.0 / p);
        let hi = law.centered_abs_moment(p + dp).powf(1.0 / (p + dp));
        prop_assert!(hi >= lo * (1.0 - 1e-12) - 1e-300);
    }

    #[test]
    fn cumulant_round_trip(law in law_strategy(5), k in 1usize..=8) {
        let kappa = law.cumulants(k).unwrap();
        let moments = moments_from_cumulants(&kappa);
        for j in 1..=k {
            let raw = law.raw_moment(j as u32);
            prop_assert!((moments[j] - raw).abs() <= 1e-10 * raw.abs().max(1.0), "j = {}", j);
        }
        let back = cumulants_from_moments(&moments);
        for (a, b) in back.iter().zip(&kappa) {
            prop_assert!((a - b).abs() <= 1e-8 * moments[k].max(1.0));
        }
    }

    #[test]
    fn env_power_dominates_geometric_power(env in mixture_strategy(), s in -4.0f64..4.0) {
        let g = env.geo_mean().unwrap();
        prop_assert!(env.env_mean_power(s).unwrap() >= g.powf(s) * (1.0 - 1e-12));
    }

    #[test]
    fn env_power_is_log_convex(env in mixture_strategy(), s1 in -4.0f64..0.0, gap1 in 0.1f64..2.0, gap2 in 0.1f64..2.0) {
        let s2 = s1 + gap1;
        let s3 = s2 + gap2;
        let f = |s: f64| env.env_mean_power(s).unwrap().ln();
        let t = gap1 / (gap1 + gap2);
        let chord = (1.0 - t) * f(s1) + t * f(s3);
        prop_assert!(f(s2) <= chord + 1e-12);
    }

    #[test]
    fn rate_orderings(env in supercritical_mixture(), p in 1.05f64..4.0) {
        let (sufficient, critical) = quenched_bounds(&env, p).unwrap();
        let (rho0, rhoc) = annealed_rates(&env, p).unwrap();
        let tol = 1e-12;
        prop_assert!(sufficient <= critical * (1.0 + tol));
        prop_assert!(rhoc <= critical * (1.0 + tol));
        if p >= 2.0 {
            prop_assert_eq!(rho0, rhoc);
        } else {
            prop_assert!((sufficient - env.geo_mean().unwrap().powf(1.0 - 1.0 / p)).abs() < 1e-12);
            if critical_rate_conditions(&env, p).unwrap().tilted_log_mean_positive {
                prop_assert!(rho0 <= rhoc * (1.0 + tol));
            }
        }
        let report = rate_report(&env, p).unwrap();
        prop_assert_eq!(report.annealed_rho0.is_some(), report.condition_flags.gl_criterion);
    }

    #[test]
    fn gl_verdict_tracks_mean_power(env in supercritical_mixture(), p in 1.05f64..3.0, dp in 0.01f64..1.0) {
        let a = gl_criterion(&env, p).unwrap();
        let b = gl_criterion(&env, p + dp).unwrap();
        prop_assert_eq!(a.holds, a.mean_power < 1.0);
        prop_assert_eq!(b.holds, b.mean_power < 1.0);
        prop_assert!(a.normalized_moment.is_finite() && a.normalized_moment >= 1.0 - 1e-12);
    }

    #[test]
    fn fit_is_scale_invariant(ratio in 0.3f64..0.95, c in 1e-3f64..1e3, n0 in 0usize..4, len in 4usize..12) {
        let base: Vec<LpEstimate> = (n0..n0 + len).map(|n| LpEstimate::exact(2.0, n, ratio.powi(n as i32))).collect();
        let scaled: Vec<LpEstimate> = base.iter().map(|e| LpEstimate::exact(2.0, e.n, c * e.value)).collect();
        let a = fit_decay(&base).unwrap();
        let b = fit_decay(&scaled).unwrap();
        prop_assert!((a.fitted_rho - b.fitted_rho).abs() < 1e-9);
        prop_assert!((a.fitted_rho - ratio.powf(-0.5)).abs() < 1e-6);
        prop_assert!(a.ci_low <= a.fitted_rho && a.fitted_rho <= a.ci_high);
    }
}
