//! Finite-support offspring distributions.
//!
//! An [`OffspringLaw`] is a probability law on `{0, 1, ..., K}` with a
//! strictly positive mean. Every functional the rate formulas consume
//! (raw and fractional moments, normalized centered absolute moments,
//! cumulants) is an exact finite sum over the support.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Probabilities must sum to one within this tolerance.
pub const PROB_SUM_TOLERANCE: f64 = 1e-12;

/// Largest cumulant order [`OffspringLaw::cumulants`] will produce.
pub const MAX_CUMULANT_ORDER: usize = 12;

/// Largest admissible support value.
pub const MAX_SUPPORT: u32 = 1 << 16;

/// Below this many parents the offspring sum is drawn one individual at a
/// time; above it the multinomial counts are drawn as conditional binomials.
const DIRECT_SUM_LIMIT: u64 = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<Outcome, f64>", into = "BTreeMap<u32, f64>")]
pub struct OffspringLaw {
    probs: Vec<f64>,
    cdf: Vec<f64>,
    atoms: Vec<(u64, f64)>,
    mean: f64,
}

impl OffspringLaw {
    /// Builds a law from `(value, probability)` pairs. Zero-probability
    /// entries are allowed and ignored for the support bound.
    pub fn new(pairs: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (value, prob) in pairs {
            if map.insert(value, prob).is_some() {
                return Err(Error::InvalidLaw(format!("duplicate support value {value}")));
            }
        }
        Self::try_from(map)
    }

    /// Builds a law from a dense probability vector indexed by support value.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        Self::new(probs.iter().enumerate().map(|(i, &p)| (i as u32, p)))
    }

    /// The point mass at `k` (`k >= 1`).
    pub fn deterministic(k: u32) -> Result<Self> {
        Self::new([(k, 1.0)])
    }

    /// Dense probabilities `p_0..=p_K`.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Largest value with positive probability.
    pub fn max_support(&self) -> u32 {
        (self.probs.len() - 1) as u32
    }

    /// `(value, probability)` for every value with positive probability.
    pub fn support(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.atoms.iter().map(|&(v, p)| (v as u32, p))
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `sum_i i^p p_i` for real `p >= 1`.
    pub fn moment(&self, p: f64) -> f64 {
        debug_assert!(p >= 0.0);
        self.atoms.iter().map(|&(v, prob)| (v as f64).powf(p) * prob).sum()
    }

    /// Integer raw moment `E X^j`, with `E X^0 = 1`.
    pub fn raw_moment(&self, j: u32) -> f64 {
        if j == 0 {
            return 1.0;
        }
        self.atoms.iter().map(|&(v, prob)| (v as f64).powi(j as i32) * prob).sum()
    }

    /// `E |X/m - 1|^p`, the p-th absolute moment of the normalized centered
    /// offspring count.
    pub fn centered_abs_moment(&self, p: f64) -> f64 {
        let m = self.mean;
        self.atoms
            .iter()
            .map(|&(v, prob)| {
                let d = (v as f64 / m - 1.0).abs();
                if d == 0.0 {
                    0.0
                } else {
                    d.powf(p) * prob
                }
            })
            .sum()
    }

    /// `sum_i p_i i log^+ i`.
    pub fn x_log_plus_x(&self) -> f64 {
        self.atoms
            .iter()
            .filter(|&&(v, _)| v > 1)
            .map(|&(v, prob)| prob * v as f64 * (v as f64).ln())
            .sum()
    }

    /// True when the law is a point mass, so that `X/m = 1` almost surely.
    pub fn is_degenerate(&self) -> bool {
        self.atoms.len() == 1
    }

    /// Cumulants `kappa_1..=kappa_k_max` from the raw moments through the
    /// moment-cumulant recurrence.
    pub fn cumulants(&self, k_max: usize) -> Result<Vec<f64>> {
        if k_max == 0 || k_max > MAX_CUMULANT_ORDER {
            return Err(param(format!(
                "cumulant order {k_max} outside 1..={MAX_CUMULANT_ORDER}"
            )));
        }
        if self.is_degenerate() {
            let mut out = alloc::vec![0.0; k_max];
            out[0] = self.mean;
            return Ok(out);
        }
        let moments: Vec<f64> = (0..=k_max as u32).map(|j| self.raw_moment(j)).collect();
        Ok(cumulants_from_moments(&moments))
    }

    /// Draws one offspring count by inverse CDF.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u).min(self.probs.len() - 1) as u32
    }

    /// Draws `sum_{i=1}^{parents} X_i` for i.i.d. `X_i` with this law.
    ///
    /// Small generations draw every individual; larger ones draw the
    /// multinomial occupation counts as a chain of conditional binomials,
    /// which has the same law and costs `O(K)` per generation.
    pub fn sample_sum<R: Rng + ?Sized>(&self, parents: u64, rng: &mut R) -> u64 {
        if parents <= DIRECT_SUM_LIMIT {
            return (0..parents).map(|_| u64::from(self.sample(rng))).sum();
        }
        let mut remaining = parents;
        let mut mass = 1.0;
        let mut total: u64 = 0;
        let last = self.atoms.len() - 1;
        for (idx, &(value, prob)) in self.atoms.iter().enumerate() {
            if remaining == 0 {
                break;
            }
            let count = if idx == last {
                remaining
            } else {
                let q = (prob / mass).clamp(0.0, 1.0);
                let c = if q >= 1.0 {
                    remaining
                } else {
                    Binomial::new(remaining, q)
                        .expect("binomial parameter clamped to [0, 1]")
                        .sample(rng)
                };
                mass -= prob;
                c
            };
            remaining -= count;
            total = total.saturating_add(count.saturating_mul(value));
        }
        total
    }
}

/// `kappa_n = mu_n - sum_{m=1}^{n-1} C(n-1, m-1) kappa_m mu_{n-m}`, where
/// `moments[0] = 1`.
pub fn cumulants_from_moments(moments: &[f64]) -> Vec<f64> {
    let k_max = moments.len().saturating_sub(1);
    let binom = binomial_table(k_max);
    let mut kappa = alloc::vec![0.0; k_max + 1];
    for n in 1..=k_max {
        let mut acc = moments[n];
        for m in 1..n {
            acc -= binom[n - 1][m - 1] * kappa[m] * moments[n - m];
        }
        kappa[n] = acc;
    }
    kappa.remove(0);
    kappa
}

/// Inverse of [`cumulants_from_moments`]: raw moments `mu_0..=mu_k` from
/// `kappa_1..=kappa_k`.
pub fn moments_from_cumulants(kappa: &[f64]) -> Vec<f64> {
    let k_max = kappa.len();
    let binom = binomial_table(k_max);
    let mut mu = alloc::vec![0.0; k_max + 1];
    mu[0] = 1.0;
    for n in 1..=k_max {
        mu[n] = (1..=n).map(|m| binom[n - 1][m - 1] * kappa[m - 1] * mu[n - m]).sum();
    }
    mu
}

pub(crate) fn binomial_table(n_max: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let mut row = alloc::vec![1.0; n + 1];
        for k in 1..n {
            row[k] = rows[n - 1][k - 1] + rows[n - 1][k];
        }
        rows.push(row);
    }
    rows
}

impl TryFrom<BTreeMap<u32, f64>> for OffspringLaw {
    type Error = Error;

    fn try_from(map: BTreeMap<u32, f64>) -> Result<Self> {
        let mut total = 0.0;
        for (&value, &prob) in &map {
            if !prob.is_finite() || prob < 0.0 {
                return Err(Error::InvalidLaw(format!(
                    "probability of {value} is {prob}, expected a finite value in [0, 1]"
                )));
            }
            if value > MAX_SUPPORT {
                return Err(Error::InvalidLaw(format!(
                    "support value {value} exceeds {MAX_SUPPORT}"
                )));
            }
            total += prob;
        }
        if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::InvalidLaw(format!(
                "probabilities sum to {total}, expected 1 within {PROB_SUM_TOLERANCE:e}"
            )));
        }
        let k = map
            .iter()
            .filter(|(_, &p)| p > 0.0)
            .map(|(&v, _)| v)
            .max()
            .ok_or_else(|| Error::InvalidLaw("empty support".into()))?;
        let mut probs = alloc::vec![0.0; k as usize + 1];
        for (&value, &prob) in map.range(..=k) {
            probs[value as usize] = prob;
        }
        let atoms: Vec<(u64, f64)> = probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| (i as u64, p))
            .collect();
        let mean: f64 = atoms.iter().map(|&(v, p)| v as f64 * p).sum();
        if !(mean > 0.0) {
            return Err(Error::InvalidLaw("mean must be strictly positive".into()));
        }
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &p in &probs {
            acc += p;
            cdf.push(acc);
        }
        // Values above the last atom must never be selected.
        for c in cdf.iter_mut().skip(k as usize) {
            *c = f64::INFINITY;
        }
        Ok(Self { probs, cdf, atoms, mean })
    }
}

/// Map key that accepts an integer or a decimal string, so laws nested in
/// tagged enums (whose keys arrive as strings) still deserialize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Outcome(pub u32);

impl<'de> Deserialize<'de> for Outcome {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = Outcome;
            fn expecting(&self, f: &mut core::fmt::Formatter) -> core::fmt::Result {
                f.write_str("a non-negative integer outcome")
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> core::result::Result<Outcome, E> {
                u32::try_from(v).map(Outcome).map_err(|_| E::custom(format!("outcome {v} out of range")))
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> core::result::Result<Outcome, E> {
                u32::try_from(v).map(Outcome).map_err(|_| E::custom(format!("outcome {v} out of range")))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> core::result::Result<Outcome, E> {
                v.parse().map(Outcome).map_err(|_| E::custom(format!("outcome `{v}` is not a non-negative integer")))
            }
        }
        d.deserialize_any(V)
    }
}

impl TryFrom<BTreeMap<Outcome, f64>> for OffspringLaw {
    type Error = Error;

    fn try_from(map: BTreeMap<Outcome, f64>) -> Result<Self> {
        Self::try_from(map.into_iter().map(|(k, v)| (k.0, v)).collect::<BTreeMap<u32, f64>>())
    }
}

impl From<OffspringLaw> for BTreeMap<u32, f64> {
    fn from(law: OffspringLaw) -> Self {
        law.support().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn law(pairs: &[(u32, f64)]) -> OffspringLaw {
        OffspringLaw::new(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn mean_examples() {
        assert_eq!(law(&[(0, 0.25), (2, 0.75)]).mean(), 1.5);
        assert_eq!(law(&[(2, 1.0)]).mean(), 2.0);
        assert_eq!(law(&[(1, 0.5), (3, 0.5)]).mean(), 2.0);
    }

    #[test]
    fn moment_examples() {
        assert_eq!(law(&[(1, 0.5), (3, 0.5)]).moment(2.0), 5.0);
        assert_eq!(law(&[(2, 1.0)]).moment(3.0), 8.0);
        assert_eq!(law(&[(0, 0.25), (2, 0.75)]).moment(2.0), 3.0);
    }

    #[test]
    fn centered_abs_moment_examples() {
        assert!((law(&[(1, 0.5), (3, 0.5)]).centered_abs_moment(2.0) - 0.25).abs() < 1e-15);
        assert_eq!(law(&[(2, 1.0)]).centered_abs_moment(2.0), 0.0);
        let v = law(&[(0, 0.25), (2, 0.75)]).centered_abs_moment(2.0);
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cumulant_examples() {
        assert_eq!(law(&[(2, 1.0)]).cumulants(3).unwrap(), [2.0, 0.0, 0.0]);
        let k = law(&[(1, 0.5), (3, 0.5)]).cumulants(2).unwrap();
        assert!((k[0] - 2.0).abs() < 1e-15 && (k[1] - 1.0).abs() < 1e-14);
        let k = law(&[(0, 0.5), (1, 0.5)]).cumulants(2).unwrap();
        assert!((k[0] - 0.5).abs() < 1e-15 && (k[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn cumulant_order_is_bounded() {
        let l = law(&[(1, 0.5), (3, 0.5)]);
        assert!(matches!(l.cumulants(0), Err(Error::Parameter(_))));
        assert!(matches!(l.cumulants(13), Err(Error::Parameter(_))));
        assert_eq!(l.cumulants(12).unwrap().len(), 12);
    }

    #[test]
    fn rejects_invalid_laws() {
        assert!(OffspringLaw::new([(0, 0.5), (1, 0.4)]).is_err());
        assert!(OffspringLaw::new([(0, 1.0)]).is_err());
        assert!(OffspringLaw::new([(0, -0.1), (2, 1.1)]).is_err());
        assert!(OffspringLaw::new([(1, f64::NAN)]).is_err());
        assert!(OffspringLaw::new([(1, 0.5), (1, 0.5)]).is_err());
        assert!(OffspringLaw::new([(1, 0.5), (2, 0.5 + 1e-13)]).is_ok());
    }

    #[test]
    fn trailing_zero_probabilities_do_not_extend_support() {
        let l = law(&[(0, 0.25), (2, 0.75), (7, 0.0)]);
        assert_eq!(l.max_support(), 2);
    }

    #[test]
    fn deterministic_sample() {
        let l = law(&[(2, 1.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        assert!((0..1000).all(|_| l.sample(&mut rng) == 2));
        assert_eq!(l.sample_sum(1_000_000, &mut rng), 2_000_000);
    }

    #[test]
    fn sample_never_returns_zero_probability_values() {
        let l = law(&[(0, 0.5), (1, 0.0), (3, 0.5)]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!((0..10_000).all(|_| l.sample(&mut rng) != 1));
    }

    #[test]
    fn empirical_frequency_matches() {
        let l = law(&[(1, 0.5), (3, 0.5)]);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1_000_000;
        let threes = (0..n).filter(|_| l.sample(&mut rng) == 3).count();
        let freq = threes as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.002, "{freq}");
    }

    #[test]
    fn same_seed_same_draws() {
        let l = law(&[(0, 0.2), (1, 0.3), (4, 0.5)]);
        let a: Vec<u32> = {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            (0..100).map(|_| l.sample(&mut rng)).collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b: Vec<u32> = (0..100).map(|_| l.sample(&mut rng)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn multinomial_sum_has_correct_mean_and_variance() {
        // Var of a sum of z i.i.d. draws is z * Var X.
        let l = law(&[(0, 0.2), (1, 0.3), (4, 0.5)]);
        let var_x = l.raw_moment(2) - l.mean() * l.mean();
        let z = 500u64;
        let reps = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<f64> = (0..reps).map(|_| l.sample_sum(z, &mut rng) as f64).collect();
        let m = draws.iter().sum::<f64>() / reps as f64;
        let v = draws.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (reps - 1) as f64;
        let se_mean = (z as f64 * var_x / reps as f64).sqrt();
        assert!((m - z as f64 * l.mean()).abs() < 4.0 * se_mean);
        assert!((v / (z as f64 * var_x) - 1.0).abs() < 0.05);
    }

    #[test]
    fn serde_map_form() {
        let l = law(&[(0, 0.25), (2, 0.75)]);
        let map: BTreeMap<u32, f64> = l.clone().into();
        assert_eq!(OffspringLaw::try_from(map).unwrap(), l);
    }
}
