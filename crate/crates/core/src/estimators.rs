//! Estimators over simulated batches: L^p distances to the proxy limit,
//! exponential decay fits, the Burkholder sandwich for `Ahat_n`, and the
//! per-trajectory almost-sure rate diagnostic.
//!
//! `W` itself is never observed. Every distance uses the proxy `W_N`,
//! `N = n + proxy_gap`, and carries the gap so the bias can be reported.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::simulate::TrajectoryBatch;
use crate::stats;

pub const DEFAULT_PROXY_GAP: usize = 20;
pub const STDERR_BATCHES: usize = 30;
pub const MIN_REPLICAS: usize = 100;
/// Acceptance slack in combined standard errors.
pub const SIGMA_SLACK: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpEstimate {
    pub p: f64,
    pub n: usize,
    pub value: f64,
    pub stderr: f64,
    pub proxy_gap: usize,
    pub capped_fraction: f64,
    /// Bound on `|value - E|W - W_n|^p|` when an exact oracle supplies one.
    pub bias_bound: Option<f64>,
    /// Means of the contiguous replica batches behind `stderr`.
    #[serde(skip)]
    pub batch_means: Vec<f64>,
}

impl LpEstimate {
    /// Wraps an exactly known value (no sampling error, no proxy).
    pub fn exact(p: f64, n: usize, value: f64) -> Self {
        Self {
            p,
            n,
            value,
            stderr: 0.0,
            proxy_gap: 0,
            capped_fraction: 0.0,
            bias_bound: None,
            batch_means: Vec::new(),
        }
    }

    pub fn with_bias_bound(mut self, bound: f64) -> Self {
        self.bias_bound = Some(bound);
        self
    }

    /// `value^{1/p}`.
    pub fn norm(&self) -> f64 {
        self.value.powf(1.0 / self.p)
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(param(format!("L^p exponent must be finite and > 1, got {p}")));
    }
    Ok(())
}

fn uncapped_values(batch: &TrajectoryBatch, f: impl Fn(usize) -> f64) -> Result<(Vec<f64>, f64)> {
    let idx: Vec<usize> = batch.uncapped().collect();
    if idx.len() < MIN_REPLICAS {
        return Err(Error::EstimateUnavailable(format!(
            "{} uncapped replicas, need at least {MIN_REPLICAS}",
            idx.len()
        )));
    }
    let capped_fraction = batch.capped_count() as f64 / batch.replicas() as f64;
    Ok((idx.into_iter().map(f).collect(), capped_fraction))
}

fn summarize(p: f64, n: usize, proxy_gap: usize, values: &[f64], capped_fraction: f64) -> LpEstimate {
    let (value, stderr, batch_means) = stats::batch_means(values, STDERR_BATCHES);
    LpEstimate { p, n, value, stderr, proxy_gap, capped_fraction, bias_bound: None, batch_means }
}

/// Estimates `E|W_{n+gap} - W_n|^p` over uncapped replicas.
pub fn lp_norm(batch: &TrajectoryBatch, p: f64, n: usize, proxy_gap: usize) -> Result<LpEstimate> {
    check_p(p)?;
    if proxy_gap == 0 || n + proxy_gap > batch.n_max() {
        return Err(param(format!(
            "need 0 < gap and n + gap <= n_max, got n = {n}, gap = {proxy_gap}, n_max = {}",
            batch.n_max()
        )));
    }
    let (values, capped) = uncapped_values(batch, |i| {
        let w = batch.w(i);
        (w[n + proxy_gap] - w[n]).abs().powf(p)
    })?;
    Ok(summarize(p, n, proxy_gap, &values, capped))
}

/// Estimates `E W_n^p`.
pub fn moment_estimate(batch: &TrajectoryBatch, p: f64, n: usize) -> Result<LpEstimate> {
    if !(p > 0.0) || n > batch.n_max() {
        return Err(param(format!("bad moment request p = {p}, n = {n}")));
    }
    let (values, capped) = uncapped_values(batch, |i| batch.w(i)[n].powf(p))?;
    Ok(summarize(p, n, 0, &values, capped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub p: f64,
    /// Per-generation decay factor of the L^p norm, `exp(-slope)`.
    pub fitted_rho: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Inclusive generation window used by the fit.
    pub window: (usize, usize),
    pub r_squared: f64,
    pub slope: f64,
    pub slope_stderr: f64,
}

impl DecayFit {
    pub fn ci_contains(&self, rho: f64) -> bool {
        self.ci_low <= rho && rho <= self.ci_high
    }

    pub fn ci_width(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

/// Plain least-squares slope of `y` on `x`.
fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let mx = stats::mean(x);
    let my = stats::mean(y);
    let sxy = stats::sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = stats::sum(x.iter().map(|a| (a - mx) * (a - mx)));
    sxy / sxx
}

/// Weighted least-squares fit of `log(value^{1/p})` against `n`.
///
/// The window is the longest run of consecutive generations whose estimates
/// have relative error below 0.5 and proxy bias below 10% of the value. The
/// bias comes from `bias_bound` when present; otherwise, for proxied
/// estimates, it is approximated by `value * rho_est^{-gap}` with `rho_est`
/// from a preliminary unweighted fit. The slope variance is the larger of
/// the residual-based value and, when batch means are available, the
/// batch-means delta-method value, which accounts for correlation between
/// estimates built from the same replicas.
pub fn fit_decay(estimates: &[LpEstimate]) -> Result<DecayFit> {
    let mut est: Vec<&LpEstimate> = estimates.iter().collect();
    est.sort_by_key(|e| e.n);
    let p = est.first().map(|e| e.p).ok_or_else(|| Error::FitUnavailable("no estimates".into()))?;
    if est.iter().any(|e| e.p != p) {
        return Err(param("all estimates in a fit must share p"));
    }
    let precise: Vec<bool> = est
        .iter()
        .map(|e| e.value > 0.0 && e.value.is_finite() && e.stderr / e.value < 0.5)
        .collect();
    let rho_est = {
        let (x, y): (Vec<f64>, Vec<f64>) = est
            .iter()
            .zip(&precise)
            .filter(|(_, &ok)| ok)
            .map(|(e, _)| (e.n as f64, e.value.ln() / p))
            .unzip();
        if x.len() >= 2 {
            (-ols_slope(&x, &y)).exp()
        } else {
            f64::NAN
        }
    };
    let admissible: Vec<bool> = est
        .iter()
        .zip(&precise)
        .map(|(e, &ok)| {
            ok && match e.bias_bound {
                Some(b) => b < 0.1 * e.value,
                None if e.proxy_gap == 0 => true,
                None => rho_est > 1.0 && rho_est.powi(-(e.proxy_gap as i32)) < 0.1,
            }
        })
        .collect();

    let mut best = (0usize, 0usize);
    let mut i = 0;
    while i < est.len() {
        if !admissible[i] {
            i += 1;
            continue;
        }
        let start = i;
        i += 1;
        while i < est.len() && admissible[i] && est[i].n == est[i - 1].n + 1 {
            i += 1;
        }
        if i - start > best.1 - best.0 {
            best = (start, i);
        }
    }
    let (lo, hi) = best;
    if hi - lo < 4 {
        return Err(Error::FitUnavailable(format!(
            "longest admissible window has {} points, need 4",
            hi - lo
        )));
    }
    let window = &est[lo..hi];
    let k = window.len();
    let x: Vec<f64> = window.iter().map(|e| e.n as f64).collect();
    let y: Vec<f64> = window.iter().map(|e| e.value.ln() / p).collect();
    let var_y: Vec<f64> = window.iter().map(|e| (e.stderr / (p * e.value)).powi(2)).collect();
    let weights: Vec<f64> = if var_y.iter().all(|&v| v > 0.0) {
        var_y.iter().map(|v| 1.0 / v).collect()
    } else {
        alloc::vec![1.0; k]
    };
    let sw = stats::sum(weights.iter().copied());
    let mx = stats::sum(weights.iter().zip(&x).map(|(w, a)| w * a)) / sw;
    let my = stats::sum(weights.iter().zip(&y).map(|(w, b)| w * b)) / sw;
    let sxx = stats::sum(weights.iter().zip(&x).map(|(w, a)| w * (a - mx) * (a - mx)));
    let sxy = stats::sum(weights.iter().zip(x.iter().zip(&y)).map(|(w, (a, b))| w * (a - mx) * (b - my)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = stats::sum(
        weights.iter().zip(x.iter().zip(&y)).map(|(w, (a, b))| w * (b - intercept - slope * a).powi(2)),
    );
    let ss_tot = stats::sum(weights.iter().zip(&y).map(|(w, b)| w * (b - my) * (b - my)));
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    let resid_var = ss_res / (k - 2) as f64 / sxx;
    let mut half_width = stats::t975(k - 2) * resid_var.sqrt();
    let mut slope_var = resid_var;

    let n_batches = window[0].batch_means.len();
    if n_batches >= 2 && window.iter().all(|e| e.batch_means.len() == n_batches) {
        // slope = sum_i c_i y_i; linearize y_i around the overall mean.
        let coef: Vec<f64> = weights.iter().zip(&x).map(|(w, a)| w * (a - mx) / sxx).collect();
        let deltas: Vec<f64> = (0..n_batches)
            .map(|b| {
                stats::sum(
                    window
                        .iter()
                        .zip(&coef)
                        .map(|(e, c)| c * (e.batch_means[b] - e.value) / (p * e.value)),
                )
            })
            .collect();
        let nb = n_batches as f64;
        let dm = stats::mean(&deltas);
        let batch_var = stats::sum(deltas.iter().map(|d| (d - dm) * (d - dm))) / (nb - 1.0) / nb;
        if batch_var > slope_var {
            slope_var = batch_var;
        }
        half_width = half_width.max(stats::t975(n_batches - 1) * batch_var.sqrt());
    }

    let fitted_rho = (-slope).exp();
    Ok(DecayFit {
        p,
        fitted_rho,
        ci_low: (-slope - half_width).exp(),
        ci_high: (-slope + half_width).exp(),
        window: (window[0].n, window[k - 1].n),
        r_squared,
        slope,
        slope_stderr: slope_var.sqrt(),
    })
}

/// Explicit two-sided Burkholder constants
/// `a_p = (p-1) / (18 p^{3/2})`, `b_p = 18 p^{3/2} / (p-1)^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurkholderConstants {
    pub a: f64,
    pub b: f64,
}

impl BurkholderConstants {
    pub fn for_p(p: f64) -> Self {
        let p32 = p.powf(1.5);
        Self { a: (p - 1.0) / (18.0 * p32), b: 18.0 * p32 / (p - 1.0).sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichVerdict {
    pub p: f64,
    pub rho: f64,
    pub n: usize,
    pub constants: BurkholderConstants,
    /// `||Ahat_n||_p`.
    pub martingale_norm: f64,
    pub martingale_stderr: f64,
    /// `||Q_n||_p`, `Q_n^2 = sum_{k<=n} rho^{2k} (W_{k+1} - W_k)^2`.
    pub quadratic_norm: f64,
    pub quadratic_stderr: f64,
    pub lower_holds: bool,
    pub upper_holds: bool,
    pub holds: bool,
}

fn norm_with_stderr(values: &[f64], p: f64) -> (f64, f64) {
    let (mean, se, _) = stats::batch_means(values, STDERR_BATCHES);
    if mean <= 0.0 {
        return (0.0, se.powf(1.0 / p));
    }
    let norm = mean.powf(1.0 / p);
    (norm, norm * se / (p * mean))
}

/// `a_p ||Q_n||_p <= ||Ahat_n||_p <= b_p ||Q_n||_p`, each side slackened by
/// `sigma_slack` combined standard errors.
pub fn burkholder_sandwich(
    batch: &TrajectoryBatch,
    p: f64,
    rho: f64,
    n: usize,
    constants: BurkholderConstants,
    sigma_slack: f64,
) -> Result<SandwichVerdict> {
    check_p(p)?;
    if n + 1 > batch.n_max() {
        return Err(param(format!("n = {n} needs n_max >= {}", n + 1)));
    }
    let ri = batch
        .rho_index(rho)
        .ok_or_else(|| Error::Parameter(format!("rho = {rho} is not on the batch grid")))?;
    let (a_vals, _) = uncapped_values(batch, |i| batch.a_hat(i, ri)[n].abs().powf(p))?;
    let (q_vals, _) = uncapped_values(batch, |i| {
        let w = batch.w(i);
        let mut weight = 1.0;
        let mut q2 = 0.0;
        for k in 0..=n {
            let d = w[k + 1] - w[k];
            q2 += weight * d * d;
            weight *= rho * rho;
        }
        q2.powf(p / 2.0)
    })?;
    let (ma, sa) = norm_with_stderr(&a_vals, p);
    let (mq, sq) = norm_with_stderr(&q_vals, p);
    let lower_slack = sigma_slack * ((constants.a * sq).powi(2) + sa * sa).sqrt();
    let upper_slack = sigma_slack * ((constants.b * sq).powi(2) + sa * sa).sqrt();
    let lower_holds = constants.a * mq - ma <= lower_slack;
    let upper_holds = ma - constants.b * mq <= upper_slack;
    Ok(SandwichVerdict {
        p,
        rho,
        n,
        constants,
        martingale_norm: ma,
        martingale_stderr: sa,
        quadratic_norm: mq,
        quadratic_stderr: sq,
        lower_holds,
        upper_holds,
        holds: lower_holds && upper_holds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsRateDiagnostic {
    pub p: f64,
    pub q: f64,
    pub epsilon: f64,
    /// `m^{1/(q+epsilon)}`.
    pub rate: f64,
    /// Generations `0..=last_n` are scanned against the proxy `W_{n_max}`.
    pub last_n: usize,
    /// Quantiles (50%, 90%, max) of the per-replica maximum statistic.
    pub max_stat_quantiles: [f64; 3],
    /// Median over replicas of `rate^n |W_N - W_n|`, per generation.
    pub median_by_n: Vec<f64>,
    /// Replicas whose statistic peaks in the last third of the window.
    pub growing_fraction: f64,
    pub consistent: bool,
}

/// Per-trajectory check of `W - W_n = o(m^{-n/(q+epsilon)})`: scans
/// `m^{n/(q+epsilon)} |W_N - W_n|` for `n <= n_max - gap`, `N = n_max`.
/// Qualitative only; `consistent` means the median statistic over the last
/// third of the window is below its value over the first third.
pub fn as_rate_diagnostic(
    batch: &TrajectoryBatch,
    p: f64,
    m_geo: f64,
    epsilon: f64,
    gap: usize,
) -> Result<AsRateDiagnostic> {
    if !(p > 1.0 && p < 2.0) {
        return Err(param(format!("a.s. rate diagnostic needs p in (1, 2), got {p}")));
    }
    let q = p / (p - 1.0);
    if !(q + epsilon > 0.0) || !(m_geo > 0.0) {
        return Err(param("need q + epsilon > 0 and m > 0"));
    }
    let big_n = batch.n_max();
    if gap == 0 || big_n < gap + 5 {
        return Err(param(format!("window too short: n_max = {big_n}, gap = {gap}")));
    }
    let last_n = big_n - gap;
    let rate = m_geo.powf(1.0 / (q + epsilon));
    let idx: Vec<usize> = batch.uncapped().collect();
    if idx.is_empty() {
        return Err(Error::EstimateUnavailable("every replica hit the population cap".into()));
    }
    let third = (last_n + 1) / 3;
    let mut per_n: Vec<Vec<f64>> = alloc::vec![Vec::with_capacity(idx.len()); last_n + 1];
    let mut maxima = Vec::with_capacity(idx.len());
    let mut growing = 0usize;
    for &i in &idx {
        let w = batch.w(i);
        let mut weight = 1.0;
        let mut head_max = 0.0f64;
        let mut tail_max = 0.0f64;
        for (n, bucket) in per_n.iter_mut().enumerate() {
            let s = weight * (w[big_n] - w[n]).abs();
            bucket.push(s);
            if n + third > last_n {
                tail_max = tail_max.max(s);
            } else {
                head_max = head_max.max(s);
            }
            weight *= rate;
        }
        if tail_max > head_max {
            growing += 1;
        }
        maxima.push(head_max.max(tail_max));
    }
    let median_by_n: Vec<f64> = per_n.iter().map(|v| stats::median(v)).collect();
    maxima.sort_by(|a, b| a.total_cmp(b));
    let quantile = |f: f64| maxima[((maxima.len() - 1) as f64 * f).round() as usize];
    let head = stats::mean(&median_by_n[..third.max(1)]);
    let tail = stats::mean(&median_by_n[last_n + 1 - third.max(1)..]);
    Ok(AsRateDiagnostic {
        p,
        q,
        epsilon,
        rate,
        last_n,
        max_stat_quantiles: [quantile(0.5), quantile(0.9), quantile(1.0)],
        median_by_n,
        growing_fraction: growing as f64 / idx.len() as f64,
        consistent: tail <= head,
    })
}
