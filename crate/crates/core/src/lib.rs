// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridging_env;
pub mod comm_graph;
pub mod dynamics;
pub mod error;
pub mod fingerprint;
pub mod harness;
pub mod invariant_sets;
pub mod learner;
pub mod safety_filter;

pub use bridging_env::{ActionPair, BridgingEnv, EnvConfig, Observation, StepOutcome, Variant};
pub use error::{Error, Result};
pub use harness::{Mode, RunConfig, Suite};
pub use learner::{Checkpoint, EvalReport, QNetworkParams, TrainConfig};
