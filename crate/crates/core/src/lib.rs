//! Numerical laboratory for supercritical branching processes in varying and
//! random environments.
//!
//! The crate is `no_std` (it needs `alloc`) and is organised bottom-up:
//!
//! * [`offspring`]: finite-support offspring laws and their scalar functionals.
//! * [`environment`]: fixed varying paths and i.i.d. mixtures of laws.
//! * [`rates`]: critical L^p convergence rates and hypothesis checks computed
//!   from environment data alone.
//! * [`exact`]: exact quenched/annealed moment recursions and closed p = 2 forms.
//! * [`simulate`]: the Monte Carlo trajectory engine.
//! * [`estimators`]: L^p-norm estimates, decay-rate fits and martingale
//!   sandwich checks over simulated batches.

#![no_std]
#![warn(missing_debug_implementations)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod environment;
pub mod error;
pub mod estimators;
pub mod exact;
pub mod offspring;
pub mod rates;
pub mod simulate;
mod stats;

pub use environment::{EnvPath, EnvironmentModel};
pub use error::{Error, Result};
pub use estimators::{DecayFit, LpEstimate};
pub use exact::{MomentTable, PartitionCoefficients};
pub use offspring::OffspringLaw;
pub use rates::RateReport;
pub use simulate::{Mode, ReplicaStatus, SimConfig, TrajectoryBatch};
