//! Monte Carlo trajectory engine.
//!
//! Each replica grows `Z_0 = 1, Z_{n+1} = sum_{i <= Z_n} X_{n,i}` with exact
//! offspring sums, records `W_n = Z_n / P_n`, and accumulates
//! `Ahat_n(rho) = sum_{k<=n} rho^k (W_{k+1} - W_k)` for every rho on the grid.
//!
//! Replica `i` draws from its own ChaCha8 stream seeded by a counter-based
//! split of the master seed, so a batch is bit-identical however the
//! replicas are scheduled. [`run`] executes them in order; parallel drivers
//! call [`SimPlan::replica`] and hand the results to
//! [`TrajectoryBatch::assemble`].

#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{EnvPath, EnvironmentModel};
use crate::error::{param, Error, Result};
use crate::offspring::OffspringLaw;

pub const DEFAULT_POP_CAP: u64 = 10_000_000;
pub const MAX_POP_CAP: u64 = 1_000_000_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Mode {
    /// One environment path, drawn from `path_seed`, shared by every replica.
    Quenched { path_seed: u64 },
    /// Every replica draws its own environment path.
    Annealed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub env: EnvironmentModel,
    pub mode: Mode,
    pub n_max: usize,
    pub replicas: usize,
    pub master_seed: u64,
    pub pop_cap: u64,
    pub rho_grid: Vec<f64>,
}

impl SimConfig {
    pub fn new(env: EnvironmentModel, mode: Mode, n_max: usize, replicas: usize, master_seed: u64) -> Self {
        Self {
            env,
            mode,
            n_max,
            replicas,
            master_seed,
            pop_cap: DEFAULT_POP_CAP,
            rho_grid: Vec::new(),
        }
    }

    pub fn with_rho_grid(mut self, rho_grid: Vec<f64>) -> Self {
        self.rho_grid = rho_grid;
        self
    }

    pub fn with_pop_cap(mut self, pop_cap: u64) -> Self {
        self.pop_cap = pop_cap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(param("replicas must be >= 1"));
        }
        if self.n_max == 0 {
            return Err(param("n_max must be >= 1"));
        }
        if !(1000..=MAX_POP_CAP).contains(&self.pop_cap) {
            return Err(param(format!("pop_cap must lie in [1000, {MAX_POP_CAP}], got {}", self.pop_cap)));
        }
        if let Some(rho) = self.rho_grid.iter().find(|r| !(r.is_finite() && **r >= 1.0)) {
            return Err(param(format!("rho values must be finite and >= 1, got {rho}")));
        }
        if let EnvironmentModel::FixedPath { path } = &self.env {
            if path.len() < self.n_max {
                return Err(param(format!(
                    "fixed path of length {} cannot drive {} generations",
                    path.len(),
                    self.n_max
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ReplicaStatus {
    Completed,
    /// `Z_at = 0`; every later `W` is zero.
    Extinct { at: usize },
    /// `Z_at` exceeded the population cap; later values are frozen.
    Capped { at: usize },
}

impl ReplicaStatus {
    pub fn is_capped(&self) -> bool {
        matches!(self, Self::Capped { .. })
    }
}

/// Output of one replica.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaTrajectory {
    /// `W_0..=W_{n_max}`.
    pub w: Vec<f64>,
    /// `Ahat_0..Ahat_{n_max-1}` for each rho, rho-major.
    pub a_hat: Vec<f64>,
    pub status: ReplicaStatus,
}

/// SplitMix64 finalizer applied to `master + (index + 1) * golden`.
pub fn replica_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Validated configuration plus the state shared by all replicas.
#[derive(Debug, Clone)]
pub struct SimPlan {
    config: SimConfig,
    shared_path: Option<EnvPath>,
}

impl SimPlan {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let shared_path = match (&config.env, config.mode) {
            (EnvironmentModel::FixedPath { .. }, _) => {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                Some(config.env.sample_path(config.n_max, &mut rng)?)
            }
            (EnvironmentModel::IidMixture { .. }, Mode::Quenched { path_seed }) => {
                let mut rng = ChaCha8Rng::seed_from_u64(path_seed);
                Some(config.env.sample_path(config.n_max, &mut rng)?.with_seed(path_seed))
            }
            (EnvironmentModel::IidMixture { .. }, Mode::Annealed) => None,
        };
        Ok(Self { config, shared_path })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn shared_path(&self) -> Option<&EnvPath> {
        self.shared_path.as_ref()
    }

    pub fn replica(&self, index: usize) -> ReplicaTrajectory {
        let cfg = &self.config;
        let n_max = cfg.n_max;
        let mut rng = ChaCha8Rng::seed_from_u64(replica_seed(cfg.master_seed, index as u64));
        let mut w = Vec::with_capacity(n_max + 1);
        w.push(1.0);
        let mut z: u64 = 1;
        let mut p_prod = 1.0f64;
        let mut log_p = 0.0f64;
        let mut status = ReplicaStatus::Completed;
        for n in 0..n_max {
            if status != ReplicaStatus::Completed {
                let last = w[n];
                w.push(last);
                continue;
            }
            let law: &OffspringLaw = match (&self.shared_path, &cfg.env) {
                (Some(path), _) => &path.laws()[n],
                (None, env @ EnvironmentModel::IidMixture { states, .. }) => {
                    &states[env.sample_state(&mut rng)]
                }
                (None, EnvironmentModel::FixedPath { .. }) => unreachable!("fixed paths are shared"),
            };
            z = law.sample_sum(z, &mut rng);
            let m = law.mean();
            p_prod *= m;
            log_p += m.ln();
            let wn = if z == 0 {
                0.0
            } else if p_prod.is_finite() && p_prod > f64::MIN_POSITIVE {
                z as f64 / p_prod
            } else {
                ((z as f64).ln() - log_p).exp()
            };
            w.push(wn);
            if z == 0 {
                status = ReplicaStatus::Extinct { at: n + 1 };
            } else if z > cfg.pop_cap {
                status = ReplicaStatus::Capped { at: n + 1 };
            }
        }
        let mut a_hat = Vec::with_capacity(cfg.rho_grid.len() * n_max);
        for &rho in &cfg.rho_grid {
            let mut acc = 0.0;
            let mut weight = 1.0;
            for n in 0..n_max {
                acc += weight * (w[n + 1] - w[n]);
                a_hat.push(acc);
                weight *= rho;
            }
        }
        ReplicaTrajectory { w, a_hat, status }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    config: SimConfig,
    shared_path: Option<EnvPath>,
    seeds: Vec<u64>,
    w: Vec<f64>,
    a_hat: Vec<f64>,
    status: Vec<ReplicaStatus>,
}

/// Runs every replica sequentially.
pub fn run(config: SimConfig) -> Result<TrajectoryBatch> {
    let plan = SimPlan::new(config)?;
    let replicas = (0..plan.config.replicas).map(|i| plan.replica(i)).collect();
    TrajectoryBatch::assemble(plan, replicas)
}

impl TrajectoryBatch {
    /// Collects replica outputs, which must be in replica-index order.
    pub fn assemble(plan: SimPlan, replicas: Vec<ReplicaTrajectory>) -> Result<Self> {
        let SimPlan { config, shared_path } = plan;
        if replicas.len() != config.replicas {
            return Err(param(format!(
                "expected {} replicas, got {}",
                config.replicas,
                replicas.len()
            )));
        }
        let n_w = config.n_max + 1;
        let n_a = config.n_max * config.rho_grid.len();
        let mut w = Vec::with_capacity(replicas.len() * n_w);
        let mut a_hat = Vec::with_capacity(replicas.len() * n_a);
        let mut status = Vec::with_capacity(replicas.len());
        for r in replicas {
            if r.w.len() != n_w || r.a_hat.len() != n_a {
                return Err(param("replica trajectory has the wrong shape"));
            }
            w.extend_from_slice(&r.w);
            a_hat.extend_from_slice(&r.a_hat);
            status.push(r.status);
        }
        let seeds = (0..config.replicas as u64).map(|i| replica_seed(config.master_seed, i)).collect();
        Ok(Self { config, shared_path, seeds, w, a_hat, status })
    }

    /// Rebuilds a batch from persisted columns.
    pub fn from_raw_parts(
        config: SimConfig,
        shared_path: Option<EnvPath>,
        w: Vec<f64>,
        a_hat: Vec<f64>,
        status: Vec<ReplicaStatus>,
    ) -> Result<Self> {
        config.validate()?;
        let r = config.replicas;
        if w.len() != r * (config.n_max + 1)
            || a_hat.len() != r * config.n_max * config.rho_grid.len()
            || status.len() != r
        {
            return Err(param("trajectory columns do not match the configuration"));
        }
        let seeds = (0..r as u64).map(|i| replica_seed(config.master_seed, i)).collect();
        Ok(Self { config, shared_path, seeds, w, a_hat, status })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Environment path shared by all replicas (quenched mode or fixed paths).
    pub fn shared_path(&self) -> Option<&EnvPath> {
        self.shared_path.as_ref()
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn replicas(&self) -> usize {
        self.status.len()
    }

    pub fn n_max(&self) -> usize {
        self.config.n_max
    }

    pub fn rho_grid(&self) -> &[f64] {
        &self.config.rho_grid
    }

    pub fn rho_index(&self, rho: f64) -> Option<usize> {
        self.config.rho_grid.iter().position(|&r| (r - rho).abs() <= 1e-12 * rho.max(1.0))
    }

    pub fn w(&self, replica: usize) -> &[f64] {
        let n_w = self.config.n_max + 1;
        &self.w[replica * n_w..(replica + 1) * n_w]
    }

    pub fn w_column(&self) -> &[f64] {
        &self.w
    }

    pub fn a_hat_column(&self) -> &[f64] {
        &self.a_hat
    }

    /// `Ahat_0..Ahat_{n_max-1}` of one replica for grid entry `rho_idx`.
    pub fn a_hat(&self, replica: usize, rho_idx: usize) -> &[f64] {
        let n = self.config.n_max;
        let start = (replica * self.config.rho_grid.len() + rho_idx) * n;
        &self.a_hat[start..start + n]
    }

    pub fn status(&self, replica: usize) -> ReplicaStatus {
        self.status[replica]
    }

    pub fn statuses(&self) -> &[ReplicaStatus] {
        &self.status
    }

    /// Indices of replicas that never hit the population cap.
    pub fn uncapped(&self) -> impl Iterator<Item = usize> + '_ {
        self.status.iter().enumerate().filter(|(_, s)| !s.is_capped()).map(|(i, _)| i)
    }

    pub fn capped_count(&self) -> usize {
        self.status.iter().filter(|s| s.is_capped()).count()
    }
}

/// Largest relative residual, over replicas, of
///
/// ```text
/// A_n = rho/(rho-1) Ahat_n + rho^{n+1}/(rho-1) (W - W_{n+1}) - (W - 1)/(rho-1)
/// ```
///
/// with `W := W_N` and `A_n = sum_{k<=n} rho^k (W_N - W_k)`. The identity is
/// algebraic, so the residual is pure roundoff.
pub fn increment_identity_check(batch: &TrajectoryBatch, rho: f64, n: usize, big_n: usize) -> Result<f64> {
    if !(rho > 1.0) {
        return Err(param(format!("identity needs rho > 1, got {rho}")));
    }
    if big_n <= n + 1 || big_n > batch.n_max() {
        return Err(param(format!(
            "need n + 1 < N <= n_max, got n = {n}, N = {big_n}, n_max = {}",
            batch.n_max()
        )));
    }
    let ri = batch
        .rho_index(rho)
        .ok_or_else(|| Error::Parameter(format!("rho = {rho} is not on the batch grid")))?;
    let mut worst = 0.0f64;
    for i in 0..batch.replicas() {
        let w = batch.w(i);
        let wn = w[big_n];
        let mut lhs = 0.0;
        let mut scale = wn.abs().max(1.0);
        let mut weight = 1.0;
        for &wk in &w[..=n] {
            let term = weight * (wn - wk);
            lhs += term;
            scale = scale.max(term.abs());
            weight *= rho;
        }
        let a = batch.a_hat(i, ri)[n];
        let c = 1.0 / (rho - 1.0);
        let pieces = [rho * c * a, rho.powi(n as i32 + 1) * c * (wn - w[n + 1]), -c * (wn - 1.0)];
        let rhs: f64 = pieces.iter().sum();
        for v in pieces.iter().chain([lhs, a].iter()) {
            scale = scale.max(v.abs());
        }
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn law(pairs: &[(u32, f64)]) -> OffspringLaw {
        OffspringLaw::new(pairs.iter().copied()).unwrap()
    }

    fn gw_config(replicas: usize, n_max: usize) -> SimConfig {
        SimConfig::new(EnvironmentModel::single(law(&[(0, 0.25), (2, 0.75)])), Mode::Annealed, n_max, replicas, 42)
            .with_rho_grid(alloc::vec![1.0, 1.05, 2.0])
    }

    #[test]
    fn deterministic_tree() {
        for mode in [Mode::Annealed, Mode::Quenched { path_seed: 3 }] {
            let cfg = SimConfig::new(EnvironmentModel::single(law(&[(2, 1.0)])), mode, 12, 20, 1)
                .with_rho_grid(alloc::vec![1.0, 1.5]);
            let b = run(cfg).unwrap();
            for i in 0..b.replicas() {
                assert!(b.w(i).iter().all(|&w| w == 1.0));
                assert!(b.a_hat(i, 0).iter().chain(b.a_hat(i, 1)).all(|&a| a == 0.0));
                assert_eq!(b.status(i), ReplicaStatus::Completed);
            }
            assert_eq!(increment_identity_check(&b, 1.5, 3, 10).unwrap(), 0.0);
        }
    }

    #[test]
    fn reruns_are_bit_identical() {
        let a = run(gw_config(500, 15)).unwrap();
        let b = run(gw_config(500, 15)).unwrap();
        assert_eq!(a, b);
        let mut other = gw_config(500, 15);
        other.master_seed = 43;
        assert_ne!(run(other).unwrap().w_column(), a.w_column());
    }

    #[test]
    fn replica_streams_do_not_depend_on_batch_size() {
        let small = run(gw_config(10, 12)).unwrap();
        let large = run(gw_config(50, 12)).unwrap();
        for i in 0..10 {
            assert_eq!(small.w(i), large.w(i));
        }
    }

    #[test]
    fn batch_invariants() {
        let b = run(gw_config(2000, 15)).unwrap();
        let mut extinct = 0;
        for i in 0..b.replicas() {
            let w = b.w(i);
            assert_eq!(w[0], 1.0);
            for ri in 0..b.rho_grid().len() {
                assert_eq!(b.a_hat(i, ri)[0], w[1] - w[0]);
            }
            if let ReplicaStatus::Extinct { at } = b.status(i) {
                extinct += 1;
                assert!(w[at..].iter().all(|&x| x == 0.0));
                assert!(w[at - 1] > 0.0);
            }
        }
        // Extinction probability of this law is 1/3.
        let frac = extinct as f64 / b.replicas() as f64;
        assert!((frac - 1.0 / 3.0).abs() < 4.0 * (2.0 / 9.0 / 2000.0f64).sqrt(), "{frac}");
    }

    #[test]
    fn identity_residual_is_roundoff() {
        let b = run(gw_config(3000, 12)).unwrap();
        assert!(increment_identity_check(&b, 2.0, 3, 8).unwrap() < 1e-9);
        assert!(increment_identity_check(&b, 1.05, 5, 12).unwrap() < 1e-9);
        assert!(increment_identity_check(&b, 1.0, 3, 8).is_err());
        assert!(increment_identity_check(&b, 3.0, 3, 8).is_err());
        assert!(increment_identity_check(&b, 2.0, 3, 4).is_err());
    }

    #[test]
    fn cap_freezes_and_flags() {
        let cfg = SimConfig::new(EnvironmentModel::single(law(&[(3, 1.0)])), Mode::Annealed, 20, 3, 9)
            .with_pop_cap(1000);
        let b = run(cfg).unwrap();
        // 3^7 = 2187 is the first generation above 1000.
        for i in 0..3 {
            assert_eq!(b.status(i), ReplicaStatus::Capped { at: 7 });
            assert!(b.w(i)[7..].iter().all(|&w| w == 1.0));
        }
        assert_eq!(b.uncapped().count(), 0);
    }

    #[test]
    fn quenched_mode_shares_one_path() {
        let env = EnvironmentModel::iid(
            alloc::vec![law(&[(1, 0.5), (3, 0.5)]), law(&[(2, 0.5), (4, 0.5)])],
            alloc::vec![0.5, 0.5],
        )
        .unwrap();
        let cfg = SimConfig::new(env, Mode::Quenched { path_seed: 8 }, 10, 5, 1);
        let b = run(cfg).unwrap();
        assert_eq!(b.shared_path().unwrap().len(), 10);
        assert_eq!(b.shared_path().unwrap().seed(), Some(8));
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = gw_config(0, 5);
        assert!(run(c.clone()).is_err());
        c.replicas = 1;
        c.n_max = 0;
        assert!(run(c.clone()).is_err());
        c.n_max = 3;
        c.pop_cap = 10;
        assert!(run(c.clone()).is_err());
        c.pop_cap = DEFAULT_POP_CAP;
        c.rho_grid = alloc::vec![0.5];
        assert!(run(c).is_err());
        let fixed = EnvironmentModel::fixed(alloc::vec![law(&[(2, 1.0)]); 3]).unwrap();
        assert!(run(SimConfig::new(fixed, Mode::Annealed, 4, 1, 0)).is_err());
    }
}
