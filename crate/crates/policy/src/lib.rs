//! Runtime for machine-generated policies.
//!
//! Policies are small [Rhai](https://rhai.rs) scripts executed in a raw
//! engine without file, network, clock or randomness access, with
//! per-call operation and wall-time budgets. Two entry shapes exist:
//!
//! - priority: `fn priority(bin, item)` scoring a placement; `bin` and
//!   `item` are float arrays, the result a float where `neg_inf()` refuses
//!   the bin.
//! - selector: `fn heuristic_selector(condition)` returning a 1-based option
//!   index from an array of VM-type proportion maps.

mod artifact;
pub mod fixtures;
mod sandbox;
mod store;
mod validate;

pub use artifact::{ArtifactId, PolicyArtifact, PolicyKind, ScoreRecord, Status};
pub use sandbox::{CompiledPolicy, PolicyVmError, Sandbox, SandboxLimits, SelectorContext, DIALECT};
pub use store::{ArtifactStore, StoreError};
pub use validate::{validate, validate_with, ProbeSuite, ProbeTarget, ValidityReport};
