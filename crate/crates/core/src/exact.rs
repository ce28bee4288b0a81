//! Exact moment recursions: no sampling error.
//!
//! Given `Z_n = z`, the next generation is a sum of `z` i.i.d. offspring
//! counts, whose k-th moment is a polynomial in `z`:
//!
//! ```text
//! E[(X_1 + ... + X_z)^k] = sum_{j=1..k} a_{k,j} z^j,
//! a_{k,j} = B_{k,j}(kappa_1, kappa_2, ...)
//! ```
//!
//! where `B_{k,j}` is the partial Bell polynomial in the cumulants of the
//! offspring law. Integer moments of `Z_{n+1}` are therefore a linear map of
//! the integer moments of `Z_n`. In an i.i.d. environment the generation-n
//! law is independent of `(P_n, Z_n)`, so the weighted annealed moments
//! `E[P_n^{-s} Z_n^k]` obey the same linear recursion with coefficients
//! `E[m_0^{-s} a_{k,j}(xi_0)]`.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::environment::{EnvPath, EnvironmentModel};
use crate::error::{param, Error, Result};
use crate::offspring::{binomial_table, OffspringLaw};

/// Highest moment order the recursions support.
pub const MAX_ORDER: usize = 6;

/// Entries above this abort the recursion.
pub const OVERFLOW_LIMIT: f64 = 1e300;

/// `a[k][j]` for `0 <= j <= k <= k_max`, with `a[0][0] = 1` and
/// `a[k][0] = 0` for `k >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionCoefficients {
    coeffs: Vec<Vec<f64>>,
}

impl PartitionCoefficients {
    pub fn k_max(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.coeffs[k][j]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.coeffs[k]
    }

    /// `E[(X_1 + ... + X_z)^k]`.
    pub fn sum_moment(&self, k: usize, z: u64) -> f64 {
        let z = z as f64;
        self.coeffs[k].iter().enumerate().map(|(j, a)| a * z.powi(j as i32)).sum()
    }
}

/// Partial Bell polynomials `B_{k,j}` evaluated at the given cumulants via
/// `B_{k,j} = sum_{i=1}^{k-j+1} C(k-1, i-1) kappa_i B_{k-i, j-1}`.
pub fn partial_bell(kappa: &[f64]) -> Vec<Vec<f64>> {
    let k_max = kappa.len();
    let binom = binomial_table(k_max);
    let mut b: Vec<Vec<f64>> = (0..=k_max).map(|k| alloc::vec![0.0; k + 1]).collect();
    b[0][0] = 1.0;
    for k in 1..=k_max {
        for j in 1..=k {
            b[k][j] = (1..=k - j + 1)
                .map(|i| binom[k - 1][i - 1] * kappa[i - 1] * b[k - i][j - 1])
                .sum();
        }
    }
    b
}

pub fn conditional_moment_coeffs(law: &OffspringLaw, k_max: usize) -> Result<PartitionCoefficients> {
    if k_max == 0 || k_max > MAX_ORDER {
        return Err(param(format!("moment order {k_max} outside 1..={MAX_ORDER}")));
    }
    let kappa = law.cumulants(k_max)?;
    Ok(PartitionCoefficients { coeffs: partial_bell(&kappa) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMode {
    Quenched,
    Annealed,
}

/// Exact moments indexed by generation `n` and order `j`.
///
/// Annealed tables hold `E[P_n^{-s} Z_n^j]`; quenched tables hold
/// `P_n^{-s} E_xi Z_n^j` together with `log P_n` of the path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub mode: MomentMode,
    pub s: f64,
    pub max_order: usize,
    values: Vec<Vec<f64>>,
    log_p: Vec<f64>,
}

impl MomentTable {
    pub fn n_max(&self) -> usize {
        self.values.len() - 1
    }

    pub fn get(&self, n: usize, j: usize) -> f64 {
        self.values[n][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Reads entry `(n, r)` as `u_n(s - r, r) = E[P_n^{-(s-r)} W_n^r]`,
    /// since `P_n^{-s} Z_n^r = P_n^{-(s-r)} W_n^r`.
    pub fn u(&self, n: usize, r: usize) -> f64 {
        self.values[n][r]
    }

    /// `E_xi W_n^k` for a quenched table built with `s = 0`.
    pub fn w_moment(&self, n: usize, k: usize) -> Option<f64> {
        if self.mode != MomentMode::Quenched || self.s != 0.0 {
            return None;
        }
        let v = self.values[n][k];
        if v <= 0.0 {
            return Some(0.0);
        }
        Some((v.ln() - k as f64 * self.log_p[n]).exp())
    }

    /// `(n, j, value)` triples in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .flat_map(|(n, row)| row.iter().enumerate().map(move |(j, &v)| (n, j, v)))
    }
}

fn check_order(r_max: usize) -> Result<()> {
    if r_max == 0 || r_max > MAX_ORDER {
        return Err(param(format!("moment order {r_max} outside 1..={MAX_ORDER}")));
    }
    Ok(())
}

fn check_row(row: &[f64], n: usize) -> Result<()> {
    for (k, v) in row.iter().enumerate() {
        if !v.is_finite() || v.abs() > OVERFLOW_LIMIT {
            return Err(Error::Overflow { n, k });
        }
    }
    Ok(())
}

/// `E_xi Z_n^k` along a realized path for `n <= n_max`, `k <= r_max`.
pub fn quenched_moments(path: &EnvPath, r_max: usize, n_max: usize) -> Result<MomentTable> {
    check_order(r_max)?;
    if path.len() < n_max {
        return Err(param(format!("path of length {} cannot reach generation {n_max}", path.len())));
    }
    let mut values = Vec::with_capacity(n_max + 1);
    values.push(alloc::vec![1.0; r_max + 1]);
    for n in 0..n_max {
        let a = conditional_moment_coeffs(&path.laws()[n], r_max)?;
        let prev: &Vec<f64> = &values[n];
        let mut next = alloc::vec![0.0; r_max + 1];
        next[0] = 1.0;
        for (k, slot) in next.iter_mut().enumerate().skip(1) {
            *slot = (1..=k).map(|j| a.get(k, j) * prev[j]).sum();
        }
        check_row(&next, n + 1)?;
        values.push(next);
    }
    Ok(MomentTable {
        mode: MomentMode::Quenched,
        s: 0.0,
        max_order: r_max,
        values,
        log_p: path.log_means()[..=n_max].to_vec(),
    })
}

/// Coefficients `E[m_0^{-s} a_{k,j}(xi_0)]` of the annealed recursion.
fn annealed_coefficients(env: &EnvironmentModel, s: f64, r_max: usize) -> Result<Vec<Vec<f64>>> {
    let (states, weights) = match env {
        EnvironmentModel::IidMixture { states, weights } => (states, weights),
        EnvironmentModel::FixedPath { .. } => {
            return Err(Error::Unsupported { kind: "fixed-path", op: "annealed_moment_table" })
        }
    };
    let mut c: Vec<Vec<f64>> = (0..=r_max).map(|k| alloc::vec![0.0; k + 1]).collect();
    for (law, &w) in states.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let a = conditional_moment_coeffs(law, r_max)?;
        let factor = w * law.mean().powf(-s);
        for (k, row) in c.iter_mut().enumerate() {
            for (j, slot) in row.iter_mut().enumerate() {
                *slot += factor * a.get(k, j);
            }
        }
    }
    Ok(c)
}

/// `h_n(k) = E[P_n^{-s} Z_n^k]` for an i.i.d. environment.
pub fn annealed_moment_table(
    env: &EnvironmentModel,
    s: f64,
    r_max: usize,
    n_max: usize,
) -> Result<MomentTable> {
    check_order(r_max)?;
    let c = annealed_coefficients(env, s, r_max)?;
    let mut values = Vec::with_capacity(n_max + 1);
    values.push(alloc::vec![1.0; r_max + 1]);
    for n in 0..n_max {
        let prev: &Vec<f64> = &values[n];
        let next: Vec<f64> =
            (0..=r_max).map(|k| (0..=k).map(|j| c[k][j] * prev[j]).sum()).collect();
        check_row(&next, n + 1)?;
        values.push(next);
    }
    Ok(MomentTable { mode: MomentMode::Annealed, s, max_order: r_max, values, log_p: Vec::new() })
}

/// `u_n(s, r) = E[P_n^{-s} W_n^r]` for `n = 0..=n_max`.
pub fn u_sequence(env: &EnvironmentModel, s: f64, r: usize, n_max: usize) -> Result<Vec<f64>> {
    let table = annealed_moment_table(env, s + r as f64, r, n_max)?;
    Ok((0..=n_max).map(|n| table.u(n, r)).collect())
}

/// Closed forms for `p = 2` in an i.i.d. environment, with
/// `q1 = E m_0^{-1}` and `b = E mbar_0(2)`:
///
/// * `sup_n E W_n^2 = 1 + b / (1 - q1)`
/// * `E |W - W_n|^2 = b q1^n / (1 - q1)`
/// * `sup_n E |Ahat_n(rho)|^2 = b / (1 - rho^2 q1)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct P2ClosedForms {
    pub q1: f64,
    pub b: f64,
}

impl P2ClosedForms {
    fn geometric(&self, ratio: f64) -> Option<f64> {
        if self.b == 0.0 {
            Some(0.0)
        } else if ratio < 1.0 {
            Some(self.b / (1.0 - ratio))
        } else {
            None
        }
    }

    /// `None` when the series diverges.
    pub fn sup_ew2(&self) -> Option<f64> {
        self.geometric(self.q1).map(|t| 1.0 + t)
    }

    pub fn tail(&self, n: usize) -> Option<f64> {
        self.geometric(self.q1).map(|t| t * self.q1.powi(n as i32))
    }

    /// `E |W_{n+1} - W_n|^2 = q1^n b`.
    pub fn increment(&self, n: usize) -> f64 {
        self.b * self.q1.powi(n as i32)
    }

    pub fn sup_ea2(&self, rho: f64) -> Option<f64> {
        self.geometric(rho * rho * self.q1)
    }
}

pub fn p2_closed_forms(env: &EnvironmentModel) -> Result<P2ClosedForms> {
    Ok(P2ClosedForms {
        q1: env.env_mean_power(-1.0)?,
        b: env.env_functional(|l| l.centered_abs_moment(2.0))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuenchedTail {
    /// `sum_{k=n}^{horizon} P_k^{-1} mbar_k(2)`.
    pub lower: f64,
    /// `lower` plus a geometric bound on the remainder using the largest
    /// `mbar_k(2)` and smallest mean on the stored path; absent when that
    /// smallest mean is `<= 1`.
    pub upper: Option<f64>,
}

/// Quenched `E_xi |W - W_n|^2`, truncated at `horizon`.
pub fn quenched_p2_tail(path: &EnvPath, n: usize, horizon: usize) -> Result<QuenchedTail> {
    if horizon <= n {
        return Err(param(format!("horizon {horizon} must exceed n = {n}")));
    }
    if path.len() <= horizon {
        return Err(param(format!("path of length {} does not cover horizon {horizon}", path.len())));
    }
    let lower = quenched_increment_sum(path, n, horizon + 1)?;
    let upper = tail_remainder_bound(path, horizon + 1).map(|r| lower + r);
    Ok(QuenchedTail { lower, upper })
}

/// Bound on `sum_{k >= from} P_k^{-1} mbar_k(2)` assuming later laws are no
/// worse than the worst stored one; `None` when some stored mean is `<= 1`.
fn tail_remainder_bound(path: &EnvPath, from: usize) -> Option<f64> {
    let min_mean = path.laws().iter().map(OffspringLaw::mean).fold(f64::INFINITY, f64::min);
    let max_mbar = path.laws().iter().map(|l| l.centered_abs_moment(2.0)).fold(0.0, f64::max);
    if max_mbar == 0.0 {
        Some(0.0)
    } else if min_mean > 1.0 {
        Some(max_mbar * (-path.log_p(from)).exp() / (1.0 - 1.0 / min_mean))
    } else {
        None
    }
}

/// Upper bound on `E_xi |W - W_n|^2` for any `n <= path.len()`: the exact
/// sum over the stored path plus the geometric remainder.
pub fn quenched_tail_bound(path: &EnvPath, n: usize) -> Result<Option<f64>> {
    let stored = quenched_increment_sum(path, n, path.len())?;
    Ok(tail_remainder_bound(path, path.len()).map(|r| stored + r))
}

/// `E_xi |W_N - W_n|^2 = sum_{k=n}^{N-1} P_k^{-1} mbar_k(2)`.
pub fn quenched_increment_sum(path: &EnvPath, n: usize, big_n: usize) -> Result<f64> {
    if big_n < n || path.len() < big_n {
        return Err(param(format!(
            "need n <= N <= path length, got n = {n}, N = {big_n}, length {}",
            path.len()
        )));
    }
    Ok(crate::stats::sum(
        (n..big_n).map(|k| (-path.log_p(k)).exp() * path.laws()[k].centered_abs_moment(2.0)),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthEnvelope {
    pub holds: bool,
    pub gamma: f64,
    pub base: f64,
    pub constant: f64,
    /// `u_n / envelope_n` for `n = 3..=n_max`.
    pub ratios: Vec<f64>,
}

/// Checks `u_n(s, r) <= C n^gamma base^n` for `3 <= n <= n_max` with
/// `b = r - 1`, `gamma = 1 + (b-1) r - (b-1) b / 2`,
/// `base = max(max_{1<=i<=b} E m_0^{i-r-s}, E m_0^{-s})`, and `C` fitted so
/// the envelope touches `u_3`.
pub fn growth_envelope_check(
    env: &EnvironmentModel,
    s: f64,
    r: usize,
    n_max: usize,
) -> Result<GrowthEnvelope> {
    if !(2..=MAX_ORDER).contains(&r) {
        return Err(param(format!("growth envelope needs r in 2..={MAX_ORDER}, got {r}")));
    }
    if n_max < 10 {
        return Err(param(format!("growth envelope needs n_max >= 10, got {n_max}")));
    }
    let rf = r as f64;
    let b = rf - 1.0;
    let gamma = 1.0 + (b - 1.0) * rf - (b - 1.0) * b / 2.0;
    let mut base = env.env_mean_power(-s)?;
    for i in 1..r {
        base = base.max(env.env_mean_power(i as f64 - rf - s)?);
    }
    let u = u_sequence(env, s, r, n_max)?;
    let envelope = |n: usize| (n as f64).powf(gamma) * base.powi(n as i32);
    let constant = u[3] / envelope(3);
    let ratios: Vec<f64> = (3..=n_max).map(|n| u[n] / (constant * envelope(n))).collect();
    let holds = ratios.iter().all(|&q| q <= 1.0 + 1e-12);
    Ok(GrowthEnvelope { holds, gamma, base, constant, ratios })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursionCheck {
    pub holds: bool,
    /// `min_n (rhs_n - lhs_n) / rhs_n`.
    pub min_relative_slack: f64,
}

/// Checks, for `1 <= n <= n_max`,
///
/// ```text
/// u_n(s,r)^{1/(r-1)} <= (E m_0^{1-r-s})^{1/(r-1)} u_{n-1}(s,r)^{1/(r-1)}
///                     + (E m_0^{-s} W_1^r)^{1/(r-1)} u_{n-1}(s,r-1)^{1/(r-1)}
/// ```
///
/// using exact `u` values; `E m_0^{-s} W_1^r` is the per-state finite sum
/// over `Z_1`.
pub fn recursive_inequality_check(
    env: &EnvironmentModel,
    s: f64,
    r: usize,
    n_max: usize,
) -> Result<RecursionCheck> {
    if !(3..=MAX_ORDER).contains(&r) {
        return Err(param(format!("recursive inequality needs r in 3..={MAX_ORDER}, got {r}")));
    }
    let rf = r as f64;
    let e = 1.0 / (rf - 1.0);
    let alpha = env.env_mean_power(1.0 - rf - s)?.powf(e);
    let w1 = env
        .env_functional(|l| l.mean().powf(-s) * l.raw_moment(r as u32) / l.mean().powi(r as i32))?
        .powf(e);
    let u_r = u_sequence(env, s, r, n_max)?;
    let u_rm1 = u_sequence(env, s, r - 1, n_max)?;
    let mut min_slack = f64::INFINITY;
    for n in 1..=n_max {
        let lhs = u_r[n].powf(e);
        let rhs = alpha * u_r[n - 1].powf(e) + w1 * u_rm1[n - 1].powf(e);
        min_slack = min_slack.min((rhs - lhs) / rhs);
    }
    Ok(RecursionCheck { holds: min_slack >= -1e-12, min_relative_slack: min_slack })
}
