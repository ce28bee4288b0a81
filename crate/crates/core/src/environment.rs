//! Environments: a fixed varying sequence of laws, or an i.i.d. finite
//! mixture over a set of laws.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::offspring::{OffspringLaw, PROB_SUM_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentModel {
    /// `path[n]` is the offspring law of generation `n`.
    FixedPath { path: Vec<OffspringLaw> },
    /// Each generation draws `states[k]` with probability `weights[k]`,
    /// independently of everything else.
    IidMixture { states: Vec<OffspringLaw>, weights: Vec<f64> },
}

impl EnvironmentModel {
    pub fn fixed(path: Vec<OffspringLaw>) -> Result<Self> {
        if path.is_empty() {
            return Err(Error::InvalidEnvironment("fixed path is empty".into()));
        }
        Ok(Self::FixedPath { path })
    }

    pub fn iid(states: Vec<OffspringLaw>, weights: Vec<f64>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidEnvironment("mixture has no states".into()));
        }
        if states.len() != weights.len() {
            return Err(Error::InvalidEnvironment(format!(
                "{} states but {} weights",
                states.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidEnvironment("weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::InvalidEnvironment(format!(
                "weights sum to {total}, expected 1 within {PROB_SUM_TOLERANCE:e}"
            )));
        }
        Ok(Self::IidMixture { states, weights })
    }

    /// Classical Galton-Watson process: one state with weight one.
    pub fn single(law: OffspringLaw) -> Self {
        Self::IidMixture { states: alloc::vec![law], weights: alloc::vec![1.0] }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::FixedPath { .. } => "fixed-path",
            Self::IidMixture { .. } => "iid-mixture",
        }
    }

    fn mixture(&self, op: &'static str) -> Result<(&[OffspringLaw], &[f64])> {
        match self {
            Self::IidMixture { states, weights } => Ok((states, weights)),
            Self::FixedPath { .. } => Err(Error::Unsupported { kind: "fixed-path", op }),
        }
    }

    /// Every law that can occur, with its environment weight (the stored
    /// path is treated as uniformly weighted for fixed paths).
    pub fn laws(&self) -> &[OffspringLaw] {
        match self {
            Self::FixedPath { path } => path,
            Self::IidMixture { states, .. } => states,
        }
    }

    /// `E log m_0`.
    pub fn expected_log_mean(&self) -> Result<f64> {
        self.env_functional_named("expected_log_mean", |l| l.mean().ln())
    }

    /// `m = exp(E log m_0)`.
    pub fn geo_mean(&self) -> Result<f64> {
        Ok(self.expected_log_mean()?.exp())
    }

    /// `E m_0^s`.
    pub fn env_mean_power(&self, s: f64) -> Result<f64> {
        self.env_functional_named("env_mean_power", |l| l.mean().powf(s))
    }

    /// `E f(xi_0)` for an arbitrary functional of the generation law.
    pub fn env_functional(&self, f: impl Fn(&OffspringLaw) -> f64) -> Result<f64> {
        self.env_functional_named("env_functional", f)
    }

    fn env_functional_named(
        &self,
        op: &'static str,
        f: impl Fn(&OffspringLaw) -> f64,
    ) -> Result<f64> {
        let (states, weights) = self.mixture(op)?;
        Ok(states
            .iter()
            .zip(weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(law, &w)| w * f(law))
            .sum())
    }

    /// Supercriticality as used to gate the rate suites. For a fixed path
    /// this is the partial average `log P_n / n` over the stored path, a
    /// diagnostic rather than a statement about the limit.
    pub fn is_supercritical(&self) -> bool {
        match self {
            Self::IidMixture { .. } => self.expected_log_mean().is_ok_and(|v| v > 0.0),
            Self::FixedPath { path } => {
                let total: f64 = path.iter().map(|l| l.mean().ln()).sum();
                total / path.len() as f64 > 0.0
            }
        }
    }

    /// Draws a state index for one generation.
    pub(crate) fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            Self::FixedPath { .. } => 0,
            Self::IidMixture { weights, .. } => {
                if weights.len() == 1 {
                    return 0;
                }
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
                for (k, &w) in weights.iter().enumerate().take(last) {
                    acc += w;
                    if u < acc {
                        return k;
                    }
                }
                last
            }
        }
    }

    /// Realizes `xi_0..xi_{length-1}`. Fixed paths return their prefix and
    /// do not touch the generator.
    pub fn sample_path<R: Rng + ?Sized>(&self, length: usize, rng: &mut R) -> Result<EnvPath> {
        match self {
            Self::FixedPath { path } => {
                if length > path.len() {
                    return Err(param(format!(
                        "requested {length} generations from a fixed path of length {}",
                        path.len()
                    )));
                }
                Ok(EnvPath::new(path[..length].to_vec(), None))
            }
            Self::IidMixture { states, .. } => {
                let laws = (0..length).map(|_| states[self.sample_state(rng)].clone()).collect();
                Ok(EnvPath::new(laws, None))
            }
        }
    }
}

/// A realized environment `xi_0..xi_{len-1}` with cumulative `log P_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvPath {
    laws: Vec<OffspringLaw>,
    seed: Option<u64>,
    log_means: Vec<f64>,
}

impl EnvPath {
    pub fn new(laws: Vec<OffspringLaw>, seed: Option<u64>) -> Self {
        let mut log_means = Vec::with_capacity(laws.len() + 1);
        let mut acc = 0.0;
        log_means.push(acc);
        for law in &laws {
            acc += law.mean().ln();
            log_means.push(acc);
        }
        Self { laws, seed, log_means }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn constant(law: OffspringLaw, length: usize) -> Self {
        Self::new(alloc::vec![law; length], None)
    }

    pub fn laws(&self) -> &[OffspringLaw] {
        &self.laws
    }

    pub fn len(&self) -> usize {
        self.laws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.laws.is_empty()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// `log P_k` for `k = 0..=len`.
    pub fn log_means(&self) -> &[f64] {
        &self.log_means
    }

    pub fn log_p(&self, k: usize) -> f64 {
        self.log_means[k]
    }

    /// `(1/n) sum_{k<n} log m_k` over the whole path.
    pub fn average_log_mean(&self) -> f64 {
        if self.laws.is_empty() {
            return 0.0;
        }
        self.log_means[self.laws.len()] / self.laws.len() as f64
    }
}
