//! Shared-parameter independent Q-learning over one-hop observation graphs.

mod checkpoint;
mod network;
mod policy;
mod replay;
mod train;

pub use checkpoint::{config_fingerprint, Checkpoint, WeightBlock, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use network::{backward, forward_q, forward_trace, Group, NetShape, QNetworkParams, Trace, DEFAULT_HIDDEN, N_ACTIONS};
pub use policy::{argmax, epsilon_at, select_action};
pub use replay::{ReplayBuffer, Transition};
pub use train::{
    check_dims, evaluate, evaluate_policy, evaluate_policy_with, gradient_check, run_episode, td_loss, td_loss_grad,
    td_update, train, train_with, CurveRecord, EpisodeMetrics, EvalReport, GreedyPolicy, GroupGradError, MeanStd,
    OptimizerKind, Policy, QLearner, TrainConfig, TrainOutput, UniformRandomPolicy,
};

#[cfg(test)]
mod tests;
