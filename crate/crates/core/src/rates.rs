//! Critical L^p convergence rates of `W_n -> W` and the hypotheses they
//! depend on, computed from environment data alone.
//!
//! With `m = exp(E log m_0)`:
//!
//! * quenched: `rho^n (E_xi |W - W_n|^p)^{1/p} -> 0` for
//!   `rho < min(m^{1-1/p}, m^{1/2})`, and `m^{1/2}` is critical;
//! * annealed (i.i.d. environment): `rho_0` and `rho_c` are built from
//!   `E m_0^{1-p}` and `E m_0^{-p/2}`.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::environment::{EnvPath, EnvironmentModel};
use crate::error::{param, Error, Result};

/// Default Cauchy-root margin for the varying-environment series test.
pub const SERIES_MARGIN: f64 = 0.02;

/// Number of points in a default rho scan.
pub const RHO_GRID_POINTS: usize = 20;

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(param(format!("L^p exponent must be finite and > 1, got {p}")));
    }
    Ok(())
}

fn require_supercritical(env: &EnvironmentModel) -> Result<()> {
    let mu = env.expected_log_mean()?;
    if mu > 0.0 {
        Ok(())
    } else {
        Err(Error::Subcritical { expected_log_mean: mu })
    }
}

/// `(min(m^{1-1/p}, m^{1/2}), m^{1/2})`.
pub fn quenched_bounds(env: &EnvironmentModel, p: f64) -> Result<(f64, f64)> {
    check_p(p)?;
    require_supercritical(env)?;
    let m = env.geo_mean()?;
    let critical = m.sqrt();
    let sufficient = m.powf(1.0 - 1.0 / p).min(critical);
    Ok((sufficient, critical))
}

/// `(rho_0, rho_c)` for an i.i.d. environment.
pub fn annealed_rates(env: &EnvironmentModel, p: f64) -> Result<(f64, f64)> {
    check_p(p)?;
    require_supercritical(env)?;
    let from_gl = env.env_mean_power(1.0 - p)?.powf(-1.0 / p);
    let from_half = env.env_mean_power(-p / 2.0)?.powf(-1.0 / p);
    if p < 2.0 {
        Ok((from_gl, from_half))
    } else {
        let r = from_gl.min(from_half);
        Ok((r, r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlCriterion {
    pub holds: bool,
    /// `E m_0^{1-p}`; the criterion needs it `< 1`.
    pub mean_power: f64,
    /// `E (Z_1/m_0)^p`. Finite for every finite-support law, so this half
    /// of the criterion is vacuous here.
    pub normalized_moment: f64,
}

/// Annealed L^p criterion for i.i.d. environments:
/// `E (Z_1/m_0)^p < inf` and `E m_0^{1-p} < 1`.
pub fn gl_criterion(env: &EnvironmentModel, p: f64) -> Result<GlCriterion> {
    check_p(p)?;
    let mean_power = env.env_mean_power(1.0 - p)?;
    let normalized_moment = env.env_functional(|l| l.moment(p) / l.mean().powf(p))?;
    Ok(GlCriterion { holds: mean_power < 1.0, mean_power, normalized_moment })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalRateConditions {
    /// `E m_0^{-p/2} log m_0`.
    pub tilted_log_mean: f64,
    pub tilted_log_mean_positive: bool,
    /// `E m_0^{-p/2-1} Z_1 log^+ Z_1`, always finite here.
    pub z_log_z_moment: f64,
    /// `E (E_xi (Z_1/m_0)^2)^{p/2}`, always finite here.
    pub quenched_second_moment: f64,
    /// `P(W_1 = 1) < 1`: some state with positive weight is not a point mass.
    pub w1_nondegenerate: bool,
}

/// Hypotheses under which `rho_c` is the annealed critical rate for
/// `p in (1, 2)`.
pub fn critical_rate_conditions(env: &EnvironmentModel, p: f64) -> Result<CriticalRateConditions> {
    check_p(p)?;
    if p >= 2.0 {
        return Err(param(format!("critical-rate conditions apply to p in (1, 2), got {p}")));
    }
    let tilted_log_mean = env.env_functional(|l| l.mean().powf(-p / 2.0) * l.mean().ln())?;
    let z_log_z_moment = env.env_functional(|l| l.mean().powf(-p / 2.0 - 1.0) * l.x_log_plus_x())?;
    let quenched_second_moment =
        env.env_functional(|l| (l.moment(2.0) / (l.mean() * l.mean())).powf(p / 2.0))?;
    Ok(CriticalRateConditions {
        tilted_log_mean,
        tilted_log_mean_positive: tilted_log_mean > 0.0,
        z_log_z_moment,
        quenched_second_moment,
        w1_nondegenerate: w1_nondegenerate(env),
    })
}

/// True when `W_1 = Z_1/m_0` is not almost surely one.
pub fn w1_nondegenerate(env: &EnvironmentModel) -> bool {
    match env {
        EnvironmentModel::IidMixture { states, weights } => {
            states.iter().zip(weights).any(|(l, &w)| w > 0.0 && !l.is_degenerate())
        }
        EnvironmentModel::FixedPath { path } => !path[0].is_degenerate(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionFlags {
    pub supercritical: bool,
    pub gl_criterion: bool,
    /// `E m_0^{-p/2} log m_0 > 0`; only evaluated for `p in (1, 2)`.
    pub tilted_log_mean_positive: Option<bool>,
    pub w1_nondegenerate: bool,
    /// Moment-finiteness hypotheses that hold automatically for
    /// finite-support laws and therefore carry no information.
    pub vacuous: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub p: f64,
    pub m_geo: f64,
    pub quenched_sufficient_bound: f64,
    pub quenched_critical: f64,
    /// Present when the annealed L^p criterion holds.
    pub annealed_rho0: Option<f64>,
    /// Present when the critical-rate hypotheses hold (`W_1`
    /// non-degenerate, and for `p < 2` the tilted log-mean is positive).
    pub annealed_rhoc: Option<f64>,
    pub condition_flags: ConditionFlags,
}

/// Assembles every rate and condition for one exponent. Fails with
/// [`Error::Subcritical`] when `E log m_0 <= 0`.
pub fn rate_report(env: &EnvironmentModel, p: f64) -> Result<RateReport> {
    let (sufficient, critical) = quenched_bounds(env, p)?;
    let (rho0, rhoc) = annealed_rates(env, p)?;
    let gl = gl_criterion(env, p)?;
    let w1 = w1_nondegenerate(env);
    let tilted = if p < 2.0 {
        Some(critical_rate_conditions(env, p)?.tilted_log_mean_positive)
    } else {
        None
    };
    let rhoc_defined = w1 && tilted.unwrap_or(true);
    Ok(RateReport {
        p,
        m_geo: env.geo_mean()?,
        quenched_sufficient_bound: sufficient,
        quenched_critical: critical,
        annealed_rho0: gl.holds.then_some(rho0),
        annealed_rhoc: rhoc_defined.then_some(rhoc),
        condition_flags: ConditionFlags {
            supercritical: true,
            gl_criterion: gl.holds,
            tilted_log_mean_positive: tilted,
            w1_nondegenerate: w1,
            vacuous: alloc::vec![
                String::from("E log E_xi (Z_1/m_0)^p < inf"),
                String::from("E (Z_1/m_0)^p < inf"),
            ],
        },
    })
}

/// `points` geometrically spaced values spanning `[lo, hi]`.
pub fn geometric_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo >= 1.0) || !(hi > lo) || points < 2 {
        return Err(param(format!("bad rho grid [{lo}, {hi}] with {points} points")));
    }
    let ratio = (hi / lo).ln() / (points - 1) as f64;
    Ok((0..points).map(|i| lo * (ratio * i as f64).exp()).collect())
}

/// Default scan: 20 points over `[1.01, 1.2 * m^{1/2}]`.
pub fn default_rho_grid(env: &EnvironmentModel, p: f64) -> Result<Vec<f64>> {
    let (_, critical) = quenched_bounds(env, p)?;
    geometric_grid(1.01, 1.2 * critical, RHO_GRID_POINTS)
}

/// Which series a varying-environment diagnostic sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum SeriesVariant {
    /// `sum_n rho^{pn} P_n^{p(1/r-1)} mbar_n(r)^{p/r}`.
    Power { r: f64 },
    /// `sum_n rho^{2n} P_n^{-1} mbar_n(p)^{2/p}` (the `p >= 2` form).
    Quadratic,
}

impl SeriesVariant {
    pub fn parse(id: &str, r: Option<f64>) -> Result<Self> {
        match (id, r) {
            ("power", Some(r)) => Ok(Self::Power { r }),
            ("power", None) => Err(param("series variant `power` needs r")),
            ("quadratic", _) => Ok(Self::Quadratic),
            _ => Err(param(format!("unknown series variant `{id}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesVerdict {
    Converging,
    Diverging,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesDiagnostic {
    pub variant: SeriesVariant,
    pub p: f64,
    pub rho: f64,
    pub terms: Vec<f64>,
    pub partial_sums: Vec<f64>,
    /// Mean of `term_n^{1/n}` over the last half of the path.
    pub root_statistic: f64,
    pub margin: f64,
    pub verdict: SeriesVerdict,
}

/// Cauchy-root test on a finite realized path. `Converging` iff the root
/// statistic is below `1 - margin`, `Diverging` iff above `1 + margin`.
pub fn bpve_series_diagnostic(
    path: &EnvPath,
    p: f64,
    rho: f64,
    variant: SeriesVariant,
    margin: f64,
) -> Result<SeriesDiagnostic> {
    check_p(p)?;
    if path.len() < 8 {
        return Err(param(format!("series diagnostic needs a path of length >= 8, got {}", path.len())));
    }
    if !(rho >= 1.0) {
        return Err(param(format!("rho must be >= 1, got {rho}")));
    }
    if let SeriesVariant::Power { r } = variant {
        if !(r >= 1.0) {
            return Err(param(format!("series exponent r must be >= 1, got {r}")));
        }
    }
    let log_rho = rho.ln();
    let log_terms: Vec<f64> = path
        .laws()
        .iter()
        .enumerate()
        .map(|(n, law)| {
            let log_p = path.log_p(n);
            let (lead, scale, mbar) = match variant {
                SeriesVariant::Power { r } => {
                    (p * log_rho, p * (1.0 / r - 1.0), law.centered_abs_moment(r).powf(p / r))
                }
                SeriesVariant::Quadratic => {
                    (2.0 * log_rho, -1.0, law.centered_abs_moment(p).powf(2.0 / p))
                }
            };
            if mbar == 0.0 {
                f64::NEG_INFINITY
            } else {
                lead * n as f64 + scale * log_p + mbar.ln()
            }
        })
        .collect();
    let terms: Vec<f64> = log_terms.iter().map(|t| t.exp()).collect();
    let mut partial_sums = Vec::with_capacity(terms.len());
    let mut acc = crate::stats::CompensatedSum::default();
    for &t in &terms {
        acc.add(t);
        partial_sums.push(acc.value());
    }
    let start = (path.len() / 2).max(1);
    let window = &log_terms[start..];
    let root_statistic = window
        .iter()
        .enumerate()
        .map(|(i, &lt)| (lt / (start + i) as f64).exp())
        .sum::<f64>()
        / window.len() as f64;
    let verdict = if root_statistic < 1.0 - margin {
        SeriesVerdict::Converging
    } else if root_statistic > 1.0 + margin {
        SeriesVerdict::Diverging
    } else {
        SeriesVerdict::Inconclusive
    };
    Ok(SeriesDiagnostic { variant, p, rho, terms, partial_sums, root_statistic, margin, verdict })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offspring::OffspringLaw;

    fn det(k: u32) -> OffspringLaw {
        OffspringLaw::deterministic(k).unwrap()
    }

    fn mix(means: &[u32]) -> EnvironmentModel {
        let w = 1.0 / means.len() as f64;
        EnvironmentModel::iid(means.iter().map(|&k| det(k)).collect(), alloc::vec![w; means.len()])
            .unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn quenched_bound_examples() {
        let (s, c) = quenched_bounds(&mix(&[2]), 1.5).unwrap();
        assert!(close(s, 2f64.powf(1.0 / 3.0), 1e-14) && close(s, 1.259921, 1e-6));
        assert!(close(c, 2f64.sqrt(), 1e-14));
        let (s, c) = quenched_bounds(&mix(&[2]), 3.0).unwrap();
        assert!(close(s, 2f64.sqrt(), 1e-14) && close(c, 2f64.sqrt(), 1e-14));
        let (_, c) = quenched_bounds(&mix(&[2, 3]), 2.5).unwrap();
        assert!(close(c, 6f64.powf(0.25), 1e-14) && close(c, 1.565085, 1e-6));
    }

    #[test]
    fn annealed_rate_examples() {
        let (r0, rc) = annealed_rates(&mix(&[2]), 2.0).unwrap();
        assert!(close(r0, 2f64.sqrt(), 1e-14) && close(rc, 2f64.sqrt(), 1e-14));
        let (_, rc) = annealed_rates(&mix(&[2, 3]), 2.0).unwrap();
        assert!(close(rc, (5.0f64 / 12.0).powf(-0.5), 1e-14) && close(rc, 1.549193, 1e-6));
        let (r0, rc) = annealed_rates(&mix(&[2]), 4.0).unwrap();
        assert!(close(r0, 2f64.sqrt(), 1e-14) && r0 == rc);
    }

    #[test]
    fn rate_formulas_reject_subcritical() {
        let half = OffspringLaw::new([(0, 0.5), (1, 0.5)]).unwrap();
        let env = EnvironmentModel::iid(alloc::vec![half, det(2)], alloc::vec![0.5, 0.5]).unwrap();
        assert!(matches!(quenched_bounds(&env, 2.0), Err(Error::Subcritical { .. })));
        assert!(matches!(annealed_rates(&env, 2.0), Err(Error::Subcritical { .. })));
        assert!(matches!(rate_report(&env, 2.0), Err(Error::Subcritical { .. })));
        assert!(matches!(quenched_bounds(&mix(&[2]), 1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn gl_examples() {
        let g = gl_criterion(&mix(&[2]), 2.0).unwrap();
        assert!(g.holds && g.mean_power == 0.5);
        let eleven = OffspringLaw::new([(1, 0.9), (2, 0.1)]).unwrap();
        let g = gl_criterion(&EnvironmentModel::single(eleven), 9.0).unwrap();
        assert!(g.holds && close(g.mean_power, 1.1f64.powi(-8), 1e-14));
        assert!(close(g.mean_power, 0.4665, 1e-4));
        let half = OffspringLaw::new([(0, 0.5), (1, 0.5)]).unwrap();
        let env = EnvironmentModel::iid(alloc::vec![half, det(4)], alloc::vec![0.5, 0.5]).unwrap();
        let g = gl_criterion(&env, 2.0).unwrap();
        assert!(!g.holds && close(g.mean_power, 1.125, 1e-14));
    }

    #[test]
    fn critical_condition_examples() {
        let c = critical_rate_conditions(&mix(&[2, 3]), 1.5).unwrap();
        assert!(c.tilted_log_mean_positive);
        assert!(!c.w1_nondegenerate);
        let half = OffspringLaw::new([(0, 0.5), (1, 0.5)]).unwrap();
        let env = EnvironmentModel::iid(alloc::vec![half, det(4)], alloc::vec![0.5, 0.5]).unwrap();
        let c = critical_rate_conditions(&env, 1.5).unwrap();
        let expected = (0.5f64.powf(-0.75) * 0.5f64.ln() + 4f64.powf(-0.75) * 4f64.ln()) / 2.0;
        assert!(close(c.tilted_log_mean, expected, 1e-14));
        assert!(close(0.5f64.powf(-0.75) * 0.5f64.ln(), -1.1657, 1e-4));
        assert!(!c.tilted_log_mean_positive);
        assert!(c.w1_nondegenerate);
        assert!(c.z_log_z_moment.is_finite() && c.quenched_second_moment.is_finite());
    }

    #[test]
    fn report_gates_optional_rates() {
        let r = rate_report(&mix(&[2]), 2.0).unwrap();
        assert_eq!(r.annealed_rho0, Some(annealed_rates(&mix(&[2]), 2.0).unwrap().0));
        assert_eq!(r.annealed_rhoc, None);
        let gw = EnvironmentModel::single(OffspringLaw::new([(0, 0.25), (2, 0.75)]).unwrap());
        let r = rate_report(&gw, 2.0).unwrap();
        assert!(close(r.annealed_rhoc.unwrap(), 1.5f64.sqrt(), 1e-14));
        assert!(r.condition_flags.gl_criterion);
    }

    #[test]
    fn default_grid_spans_transition() {
        let g = default_rho_grid(&mix(&[2]), 2.0).unwrap();
        assert_eq!(g.len(), 20);
        assert!(close(g[0], 1.01, 1e-14));
        assert!(close(g[19], 1.2 * 2f64.sqrt(), 1e-12));
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    fn third_law() -> OffspringLaw {
        OffspringLaw::new([(0, 1.0 / 6.0), (2, 2.0 / 3.0), (4, 1.0 / 6.0)]).unwrap()
    }

    #[test]
    fn series_examples() {
        let law = third_law();
        assert!(close(law.mean(), 2.0, 1e-15));
        assert!(close(law.centered_abs_moment(2.0), 1.0 / 3.0, 1e-15));
        let path = EnvPath::constant(law, 32);
        let d = bpve_series_diagnostic(&path, 2.0, 1.0, SeriesVariant::Power { r: 2.0 }, SERIES_MARGIN)
            .unwrap();
        assert!(close(d.terms[3], 1.0 / 3.0 / 8.0, 1e-15));
        assert!(d.root_statistic < 0.5 && d.root_statistic > 0.45);
        assert_eq!(d.verdict, SeriesVerdict::Converging);
        let q = bpve_series_diagnostic(&path, 2.0, 1.0, SeriesVariant::Quadratic, SERIES_MARGIN).unwrap();
        for (a, b) in d.terms.iter().zip(&q.terms) {
            assert!(close(*a, *b, 1e-15 * a.max(1.0)));
        }
        let d = bpve_series_diagnostic(&path, 2.0, 1.5, SeriesVariant::Power { r: 2.0 }, SERIES_MARGIN)
            .unwrap();
        assert!(d.root_statistic > 1.02 && d.root_statistic < 1.125);
        assert_eq!(d.verdict, SeriesVerdict::Diverging);
        let flat = EnvPath::constant(det(2), 16);
        let d = bpve_series_diagnostic(&flat, 2.0, 1.5, SeriesVariant::Quadratic, SERIES_MARGIN).unwrap();
        assert!(d.terms.iter().all(|&t| t == 0.0));
        assert_eq!(d.verdict, SeriesVerdict::Converging);
    }

    #[test]
    fn series_argument_errors() {
        let path = EnvPath::constant(third_law(), 4);
        assert!(bpve_series_diagnostic(&path, 2.0, 1.0, SeriesVariant::Quadratic, 0.02).is_err());
        assert!(SeriesVariant::parse("bogus", None).is_err());
        assert!(SeriesVariant::parse("power", None).is_err());
        assert_eq!(SeriesVariant::parse("quadratic", None).unwrap(), SeriesVariant::Quadratic);
    }
}
