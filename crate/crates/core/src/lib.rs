//! Environment, baselines and exact offline search for online dynamic
//! multidimensional bin packing (VM placement).
//!
//! The crate is organised bottom-up:
//!
//! - [`trace`]: request streams, VM type classification, scenario windows and
//!   synthetic workloads.
//! - [`sim`]: the event-driven environment with delayed deletion release and
//!   first-failure termination.
//! - [`heuristics`]: Best-Fit, First-Fit, Hindsight and the score-argmax
//!   wrapper used by generated priority functions.
//! - [`oracle`]: desk-scale exact search for the offline optimum.
//! - [`metrics`]: performance ratio and code valid ratio.
//! - [`par`]: data-parallel helpers with a sequential fallback.

pub mod heuristics;
pub mod metrics;
pub mod oracle;
pub mod par;
pub mod sim;
pub mod trace;

pub use heuristics::{Baseline, Lifetimes, PriorityFn, Scored};
pub use sim::{
    advance, run_episode, run_episode_with, Action, ClusterSpec, EpisodeOptions, EpisodeResult, PlacementPolicy,
    PolicyError, RewardWeights, SimError, SimState, StepOutcome,
};
pub use trace::{Op, Request, RequestSequence, Scenario, VmId, VmType};
