use serde::{Deserialize, Serialize};

use super::{ActionPair, EnvConfig, EnvState, Variant};
use crate::comm_graph::EntityId;
use crate::error::{Error, Result};

/// Node features: one-hot agent id, position, last action, target A, target B,
/// and for [`Variant::ANode`] the node-level safety flag.
pub fn node_feature_dim(n_agents: usize, variant: Variant) -> usize {
    n_agents + 8 + usize::from(variant.node_safety_feature())
}

/// Edge features: `Δp_x, Δp_y, d_ij` and, for variants A, B and C, `S_ij`.
pub fn edge_feature_dim(variant: Variant) -> usize {
    3 + usize::from(variant.edge_safety_feature())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborEntry {
    pub agent: usize,
    pub node: Vec<f64>,
    pub edge: Vec<f64>,
}

/// Local one-hop view of a single agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub agent: usize,
    pub ego: Vec<f64>,
    pub neighbors: Vec<NeighborEntry>,
}

fn node_features(state: &EnvState, config: &EnvConfig, agent: usize, variant: Variant) -> Vec<f64> {
    let n = config.n_agents;
    let mut f = vec![0.0; node_feature_dim(n, variant)];
    f[agent] = 1.0;
    let p = state.agents[agent].position();
    let ActionPair { ax, ay } = state.last_actions[agent];
    let t = &state.targets;
    f[n..n + 8].copy_from_slice(&[
        p[0],
        p[1],
        f64::from(ax),
        f64::from(ay),
        t[0].pos[0],
        t[0].pos[1],
        t[1].pos[0],
        t[1].pos[1],
    ]);
    if variant.node_safety_feature() {
        f[n + 8] = if state.last_blocked_agents[agent] { 1.0 } else { 0.0 };
    }
    f
}

pub fn build_observation(state: &EnvState, config: &EnvConfig, agent: usize, variant: Variant) -> Result<Observation> {
    if agent >= config.n_agents {
        return Err(Error::UnknownEntity(EntityId::agent(agent)));
    }
    let pi = state.agents[agent].position();
    let neighbors = state
        .graph
        .agent_neighbors(agent)?
        .into_iter()
        .map(|j| {
            let pj = state.agents[j].position();
            let (dx, dy) = (pi[0] - pj[0], pi[1] - pj[1]);
            let mut edge = vec![dx, dy, (dx * dx + dy * dy).sqrt()];
            if variant.edge_safety_feature() {
                let key = (agent.min(j), agent.max(j));
                edge.push(if state.last_blocked_pairs.contains(&key) { 1.0 } else { 0.0 });
            }
            NeighborEntry {
                agent: j,
                node: node_features(state, config, j, variant),
                edge,
            }
        })
        .collect();
    Ok(Observation {
        agent,
        ego: node_features(state, config, agent, variant),
        neighbors,
    })
}
