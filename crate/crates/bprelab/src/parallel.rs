//! Multi-threaded replica driver.

use bprelab_core::simulate::SimPlan;
use bprelab_core::{Result, SimConfig, TrajectoryBatch};
use rayon::prelude::*;

/// Runs replicas on the current rayon pool. Each replica owns its RNG
/// stream and results are collected in index order, so the batch is
/// bit-identical to [`bprelab_core::simulate::run`] for any thread count.
pub fn run_parallel(config: SimConfig) -> Result<TrajectoryBatch> {
    let plan = SimPlan::new(config)?;
    let replicas = (0..plan.config().replicas).into_par_iter().map(|i| plan.replica(i)).collect();
    TrajectoryBatch::assemble(plan, replicas)
}

/// A pool with `threads` workers; 0 uses the rayon default.
pub fn thread_pool(threads: usize) -> std::result::Result<rayon::ThreadPool, rayon::ThreadPoolBuildError> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build()
}
