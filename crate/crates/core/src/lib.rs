//! Rare-event-aware commitment of a backup coal plant under wind uncertainty.
//!
//! The pipeline:
//!
//! 1. [`fv`] estimates the probabilities of large negative wind-power changes
//!    with a Fleming-Viot particle system and provides a sampler for them.
//! 2. [`tree`] builds order-`B` scenario trees whose branches are AR(2)
//!    changes ([`stochastic`]) or, in biased mode, partly rare changes.
//! 3. [`solver`] picks one plant state per tree node by an exact bottom-up
//!    recursion; [`lp`] exports the same integer program in LP format.
//! 4. [`evaluation`] replays the solved policy on out-of-sample wind paths
//!    and reports cost and demand-satisfaction metrics.
//!
//! With the default `parallel` feature, tree construction, the solver sweep,
//! realization batches and evaluation run on rayon. Every parallel unit draws
//! from its own derived stream ([`seed`]), so outputs are identical for any
//! thread count and for the sequential build.

pub mod config;
pub mod error;
pub mod evaluation;
pub mod fmt;
pub mod fv;
pub mod lp;
pub mod par;
pub mod seed;
pub mod solver;
pub mod stochastic;
pub mod tree;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use evaluation::{
    closest_path, evaluate_batch, realized_dispatch, reproduce_table, DispatchTrace, EvaluationReport, TableReport,
};
pub use fv::{estimate_tail, RareChangeSampler, TailEstimate, TailPartition, TailProbabilities};
pub use solver::{solve_tree_dp, verify_solution, CostParams, PlantState, Solution, SolverOptions};
pub use stochastic::{apply_change, generate_realization, ARModel, ARState, Realization, RealizationConfig};
pub use tree::{build_tree, node_count, ScenarioTree, TreeConfig, TreeMode, TreeNode};
