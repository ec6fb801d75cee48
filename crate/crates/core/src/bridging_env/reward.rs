use serde::{Deserialize, Serialize};

use crate::comm_graph::{DynamicCommGraph, EntityId};
use crate::error::Result;

pub const PATH_BONUS: f64 = 100.0;

/// Per-step joint reward before any safety penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// `|C_max| / |𝒱|` over agents and targets.
    pub base: f64,
    /// Distance from the agents' centroid to the midpoint of the targets, scaled.
    pub centroid_penalty: f64,
    /// Bonus when a target-to-target path exists, else 0.
    pub path_bonus: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn path_exists(&self) -> bool {
        self.path_bonus > 0.0
    }
}

/// Reward with the default path bonus and unit centroid scale.
pub fn compute_reward(
    graph: &DynamicCommGraph,
    agent_positions: &[[f64; 2]],
    target_positions: &[[f64; 2]; 2],
) -> Result<RewardBreakdown> {
    compute_reward_scaled(graph, agent_positions, target_positions, PATH_BONUS, 1.0)
}

pub fn compute_reward_scaled(
    graph: &DynamicCommGraph,
    agent_positions: &[[f64; 2]],
    target_positions: &[[f64; 2]; 2],
    bonus: f64,
    centroid_scale: f64,
) -> Result<RewardBreakdown> {
    let base = if graph.is_empty() {
        0.0
    } else {
        graph.largest_component_size() as f64 / graph.len() as f64
    };
    let n = agent_positions.len().max(1) as f64;
    let cx = agent_positions.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = agent_positions.iter().map(|p| p[1]).sum::<f64>() / n;
    let mx = 0.5 * (target_positions[0][0] + target_positions[1][0]);
    let my = 0.5 * (target_positions[0][1] + target_positions[1][1]);
    let centroid_penalty = centroid_scale * (cx - mx).hypot(cy - my);
    let path = graph.path_exists(EntityId::target(0), EntityId::target(1))?;
    let (path_bonus, total) = if path {
        (bonus, bonus)
    } else {
        (0.0, base - centroid_penalty)
    };
    Ok(RewardBreakdown {
        base,
        centroid_penalty,
        path_bonus,
        total,
    })
}
