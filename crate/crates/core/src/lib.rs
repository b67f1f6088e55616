//! Galton-Watson trees as random electric networks.
//!
//! The edge into a vertex at depth `d` carries resistance `m^d xi`, with `m`
//! the mean offspring number and `xi` i.i.d. positive weights. This crate
//! computes the root-to-level-`n` conductance `C_n` exactly on sampled trees,
//! follows its law to large depths with population dynamics, cross-checks
//! both against explicit-network oracles, and runs seeded, reproducible
//! experiments around them.
//!
//! ```
//! use gw_electric_core::{sample_tree_observables, OffspringLaw, ResistanceLaw, TreeOptions};
//!
//! let off = OffspringLaw::deterministic(2).unwrap();
//! let res = ResistanceLaw::point_mass(1.0).unwrap();
//! let obs = sample_tree_observables(&off, &res, 5, &TreeOptions::default(), 42).unwrap();
//! assert!((obs.c_n - 0.2).abs() < 1e-15);
//! ```

pub mod error;
pub mod harness;
pub mod model;
pub mod oracles;
pub mod pool;
pub mod rng;
pub mod stats;
pub mod tree;

pub use error::{Error, Result};
pub use harness::{
    estimate_inverse_w, load_record, persist, resistance_limit_check, run_experiment, theorem1_diagnostic,
    theorem4_variance_check, threads_from_env, with_threads, DepthSamples, ExperimentConfig, Mode, ResultRecord,
};
pub use model::{
    expansion_constants, summarize, ExpansionConstants, ModelSummary, OffspringLaw, ResistanceFamily, ResistanceLaw,
};
pub use oracles::{
    effective_resistance_laplacian, random_walk_conductance, series_parallel_reduce, ExplicitNetwork, WalkEstimate,
};
pub use pool::{
    estimate_c0, fit_log_correction, init_pool, lambda_rescaled_trajectory, moment_trajectory, step_pool, Estimate,
    LogFit, MomentTrajectory, PoolOptions, PoolState,
};
pub use rng::{replica_seed, StreamKey};
pub use stats::Summary;
pub use tree::{materialize_tree, sample_tree_observables, sample_tree_profile, TreeObservables, TreeOptions, TreeProfile};
