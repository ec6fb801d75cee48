//! Dynamic network bridging task.
//!
//! Agents pick one of nine planar moves per time-step. A move becomes a target
//! point `w = p + offset · (a_x, a_y)`; the safety filter walks the setpoint
//! toward it, the closed-loop dynamics track the setpoint, the two targets roam
//! between waypoints, and the whole team shares one reward for bridging them.

mod observation;
mod reward;
mod trajectory;

use std::collections::BTreeSet;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use observation::{build_observation, edge_feature_dim, node_feature_dim, NeighborEntry, Observation};
pub use reward::{compute_reward, compute_reward_scaled, RewardBreakdown, PATH_BONUS};
pub use trajectory::{
    read_trajectory, StepRecord, TrajectoryHeader, TrajectorySegment, TrajectoryWriter, TRAJECTORY_FORMAT,
    TRAJECTORY_VERSION,
};

use crate::comm_graph::{build_graph, DynamicCommGraph, EntityId};
use crate::dynamics::{self, AgentPhysState, LtiModel};
use crate::error::{Error, Result};
use crate::invariant_sets::ellipsoids_intersect;
use crate::safety_filter::{
    detect_deadlock, run_update_round_with, FilterMode, SafetyActivation, SafetyDecision, SafetyParams,
    SetpointTracker, UpdateOrder,
};

/// Attempts allowed for every rejection-sampling loop.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// No filter during training, base edge features only.
    Baseline,
    /// Filter plus the edge-level activation flag `S_ij`.
    A,
    /// Filter plus a node-level activation flag.
    #[serde(rename = "a-node")]
    ANode,
    /// As A, with a penalty per blocked agent.
    B,
    /// As B, truncating the episode on the first activation.
    C,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Baseline, Variant::A, Variant::ANode, Variant::B, Variant::C];

    pub fn uses_filter(self) -> bool {
        self != Variant::Baseline
    }

    pub fn edge_safety_feature(self) -> bool {
        matches!(self, Variant::A | Variant::B | Variant::C)
    }

    pub fn node_safety_feature(self) -> bool {
        self == Variant::ANode
    }

    pub fn penalized(self) -> bool {
        matches!(self, Variant::B | Variant::C)
    }

    pub fn truncates(self) -> bool {
        self == Variant::C
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::A => "a",
            Variant::ANode => "a-node",
            Variant::B => "b",
            Variant::C => "c",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected baseline|a|a-node|b|c)")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub n_agents: usize,
    /// Edge threshold between two entities, grid units.
    pub comm_range: f64,
    pub episode_len: usize,
    /// Distance from the current position to the target point per unit action.
    pub action_offset: f64,
    /// Steps a target waits at each waypoint.
    pub target_pause: usize,
    /// Grid units a target travels per step.
    pub target_speed: f64,
    /// Keep targets fixed at their initial positions.
    pub static_targets: bool,
    pub variant: Variant,
    /// Enforce the filter even for [`Variant::Baseline`]; evaluation sets this.
    pub force_filter: bool,
    pub model: String,
    pub dt: f64,
    pub substeps: usize,
    /// Semi-major axis of the `𝓔_c` position shadow as a fraction of the ball radius.
    pub ball_fill: f64,
    pub update_order: UpdateOrder,
    pub penalty_value: f64,
    pub centroid_scale: f64,
    pub deadlock_threshold: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_agents: 3,
            comm_range: 0.20,
            episode_len: 100,
            action_offset: 0.05,
            target_pause: 5,
            target_speed: 0.02,
            static_targets: false,
            variant: Variant::A,
            force_filter: false,
            model: dynamics::QUAD_12.to_string(),
            dt: dynamics::DEFAULT_DT,
            substeps: dynamics::DEFAULT_SUBSTEPS,
            ball_fill: crate::safety_filter::DEFAULT_BALL_FILL,
            update_order: UpdateOrder::Ascending,
            penalty_value: -10.0,
            centroid_scale: 1.0,
            deadlock_threshold: crate::safety_filter::DEFAULT_DEADLOCK_THRESHOLD,
        }
    }
}

impl EnvConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_agents == 0 {
            return bad("n_agents must be positive".into());
        }
        if !(self.comm_range > 0.0) {
            return bad(format!("comm_range must be positive, got {}", self.comm_range));
        }
        if self.episode_len == 0 {
            return bad("episode_len must be positive".into());
        }
        if !(self.action_offset > 0.0) {
            return bad(format!("action_offset must be positive, got {}", self.action_offset));
        }
        if !(self.target_speed >= 0.0) {
            return bad(format!("target_speed must be non-negative, got {}", self.target_speed));
        }
        if !(self.dt > 0.0) || self.substeps == 0 {
            return bad("dt and substeps must be positive".into());
        }
        Ok(())
    }

    pub fn filter_enforced(&self) -> bool {
        self.force_filter || self.variant.uses_filter()
    }

    pub fn ball_radius(&self) -> f64 {
        self.comm_range / 2.0
    }

    pub fn node_dim(&self) -> usize {
        node_feature_dim(self.n_agents, self.variant)
    }

    pub fn edge_dim(&self) -> usize {
        edge_feature_dim(self.variant)
    }
}

/// Move per axis: -1 backward, 0 hold, +1 forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ActionPair {
    pub ax: i8,
    pub ay: i8,
}

impl ActionPair {
    pub const COUNT: usize = 9;
    pub const HOLD: ActionPair = ActionPair { ax: 0, ay: 0 };

    pub fn from_index(index: usize) -> Result<Self> {
        if index >= Self::COUNT {
            return Err(Error::InvalidParameter(format!("action index {index} out of range")));
        }
        Ok(Self {
            ax: (index / 3) as i8 - 1,
            ay: (index % 3) as i8 - 1,
        })
    }

    pub fn index(self) -> usize {
        ((self.ax + 1) * 3 + (self.ay + 1)) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    pub pos: [f64; 2],
    pub waypoint: [f64; 2],
    /// Remaining wait at the current waypoint.
    pub pause: usize,
}

#[derive(Debug, Clone)]
pub struct EnvState {
    pub agents: Vec<AgentPhysState>,
    pub trackers: Vec<SetpointTracker>,
    pub targets: [TargetState; 2],
    pub t: usize,
    pub last_actions: Vec<ActionPair>,
    pub last_blocked_agents: Vec<bool>,
    /// Unordered pairs `(min, max)` blocked during the previous update round.
    pub last_blocked_pairs: BTreeSet<(usize, usize)>,
    pub graph: DynamicCommGraph,
    pub total_activations: usize,
    pub waypoint_fallbacks: usize,
    pub done: bool,
}

impl EnvState {
    pub fn agent_positions(&self) -> Vec<[f64; 2]> {
        self.agents.iter().map(AgentPhysState::position).collect()
    }

    pub fn target_positions(&self) -> [[f64; 2]; 2] {
        [self.targets[0].pos, self.targets[1].pos]
    }
}

#[derive(Debug, Clone)]
pub struct StepInfo {
    pub decisions: Vec<SafetyDecision>,
    pub activations: Vec<SafetyActivation>,
    pub blocked: Vec<bool>,
    pub deadlocked: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observations: Vec<Observation>,
    /// Joint reward, repeated once per agent.
    pub rewards: Vec<f64>,
    pub reward: RewardBreakdown,
    pub safety_penalty: f64,
    pub joint_reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub struct BridgingEnv {
    config: EnvConfig,
    model: LtiModel,
    params: SafetyParams,
    rng: ChaCha8Rng,
    seed: u64,
    state: EnvState,
}

/// Builds an environment and resets it with `seed`.
pub fn reset(config: EnvConfig, seed: u64) -> Result<(BridgingEnv, Vec<Observation>)> {
    let mut env = BridgingEnv::new(config)?;
    let obs = env.reset(seed)?;
    Ok((env, obs))
}

impl BridgingEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let model = dynamics::model_by_label(&config.model, config.dt)?;
        let params = SafetyParams::for_model(&model, config.ball_radius(), config.ball_fill)?;
        if !params.shadow_fits_ball(config.ball_radius())? {
            return Err(Error::Config(format!(
                "ball_fill {} violates the projection-in-ball requirement",
                config.ball_fill
            )));
        }
        let graph = build_graph(&[], config.comm_range)?;
        let n = config.n_agents;
        let state = EnvState {
            agents: Vec::new(),
            trackers: Vec::new(),
            targets: [
                TargetState {
                    pos: [0.0; 2],
                    waypoint: [0.0; 2],
                    pause: 0,
                },
                TargetState {
                    pos: [0.0; 2],
                    waypoint: [0.0; 2],
                    pause: 0,
                },
            ],
            t: 0,
            last_actions: vec![ActionPair::HOLD; n],
            last_blocked_agents: vec![false; n],
            last_blocked_pairs: BTreeSet::new(),
            graph,
            total_activations: 0,
            waypoint_fallbacks: 0,
            done: true,
        };
        Ok(Self {
            config,
            model,
            params,
            rng: ChaCha8Rng::seed_from_u64(0),
            seed: 0,
            state,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn params(&self) -> &SafetyParams {
        &self.params
    }

    pub fn model(&self) -> &LtiModel {
        &self.model
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    fn embed(&self, pos: [f64; 2]) -> DVector<f64> {
        let mut x = DVector::zeros(self.model.dim());
        x[0] = pos[0];
        x[1] = pos[1];
        x
    }

    pub fn reset(&mut self, seed: u64) -> Result<Vec<Observation>> {
        self.seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.config.n_agents;

        let mut setpoints: Vec<DVector<f64>> = Vec::with_capacity(n);
        let mut attempts = 0;
        while setpoints.len() < n {
            attempts += 1;
            if attempts > MAX_PLACEMENT_ATTEMPTS {
                return Err(Error::PlacementFailure(MAX_PLACEMENT_ATTEMPTS));
            }
            let xy = [self.rng.random(), self.rng.random()];
            let cand = self.embed(xy);
            let mut safe = true;
            for sp in &setpoints {
                if ellipsoids_intersect(&self.params.p, self.params.c, &cand, sp)? {
                    safe = false;
                    break;
                }
            }
            if safe {
                setpoints.push(cand);
            }
        }
        self.state.agents = setpoints.iter().map(|sp| AgentPhysState::at_rest(sp.clone())).collect();
        self.state.trackers = setpoints
            .into_iter()
            .enumerate()
            .map(|(k, sp)| SetpointTracker::new(k, sp))
            .collect();

        let cr = self.config.comm_range;
        let mut attempts = 0;
        let (t0, t1) = loop {
            attempts += 1;
            if attempts > MAX_PLACEMENT_ATTEMPTS {
                return Err(Error::PlacementFailure(MAX_PLACEMENT_ATTEMPTS));
            }
            let a = [self.rng.random(), self.rng.random()];
            let b = [self.rng.random(), self.rng.random()];
            let d = dist(a, b);
            if d > 2.0 * cr && d <= 4.0 * cr {
                break (a, b);
            }
        };
        self.state.targets = [
            TargetState {
                pos: t0,
                waypoint: t0,
                pause: 0,
            },
            TargetState {
                pos: t1,
                waypoint: t1,
                pause: 0,
            },
        ];
        if !self.config.static_targets {
            for k in 0..2 {
                self.state.targets[k].waypoint = self.sample_waypoint(k);
            }
        }

        self.state.t = 0;
        self.state.last_actions = vec![ActionPair::HOLD; n];
        self.state.last_blocked_agents = vec![false; n];
        self.state.last_blocked_pairs.clear();
        self.state.total_activations = 0;
        self.state.waypoint_fallbacks = 0;
        self.state.done = false;
        self.rebuild_graph()?;
        self.observations()
    }

    fn rebuild_graph(&mut self) -> Result<()> {
        let mut pos: Vec<(EntityId, [f64; 2])> = self
            .state
            .agents
            .iter()
            .enumerate()
            .map(|(k, a)| (EntityId::agent(k), a.position()))
            .collect();
        pos.push((EntityId::target(0), self.state.targets[0].pos));
        pos.push((EntityId::target(1), self.state.targets[1].pos));
        self.state.graph = build_graph(&pos, self.config.comm_range)?;
        Ok(())
    }

    pub fn observations(&self) -> Result<Vec<Observation>> {
        (0..self.config.n_agents)
            .map(|k| build_observation(&self.state, &self.config, k, self.config.variant))
            .collect()
    }

    /// Waypoint for target `k`: farther than the comm range from every agent and
    /// between 2 and 4 comm ranges from the other target's waypoint.
    fn sample_waypoint(&mut self, k: usize) -> [f64; 2] {
        let cr = self.config.comm_range;
        let other = self.state.targets[1 - k].waypoint;
        let agents = self.state.agent_positions();
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let w = [self.rng.random(), self.rng.random()];
            let clear = agents.iter().all(|a| dist(*a, w) > cr);
            let d = dist(w, other);
            if clear && (2.0 * cr..=4.0 * cr).contains(&d) {
                return w;
            }
        }
        self.state.waypoint_fallbacks += 1;
        let corners = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let clearance = |c: &[f64; 2]| agents.iter().map(|a| dist(*a, *c)).fold(f64::INFINITY, f64::min);
        corners
            .into_iter()
            .max_by(|a, b| clearance(a).total_cmp(&clearance(b)))
            .expect("four corners")
    }

    /// Moves each target toward its waypoint; on arrival it waits
    /// `target_pause` steps and then draws a new waypoint.
    pub fn advance_targets(&mut self) {
        if self.config.static_targets {
            return;
        }
        let speed = self.config.target_speed;
        for k in 0..2 {
            let tgt = &mut self.state.targets[k];
            if tgt.pause > 0 {
                tgt.pause -= 1;
                if tgt.pause == 0 {
                    let w = self.sample_waypoint(k);
                    self.state.targets[k].waypoint = w;
                }
                continue;
            }
            let d = dist(tgt.pos, tgt.waypoint);
            if d <= speed {
                tgt.pos = tgt.waypoint;
                tgt.pause = self.config.target_pause;
                if tgt.pause == 0 {
                    let w = self.sample_waypoint(k);
                    self.state.targets[k].waypoint = w;
                }
            } else {
                let f = speed / d;
                tgt.pos = [
                    tgt.pos[0] + f * (tgt.waypoint[0] - tgt.pos[0]),
                    tgt.pos[1] + f * (tgt.waypoint[1] - tgt.pos[1]),
                ];
            }
        }
    }

    pub fn step(&mut self, actions: &[ActionPair]) -> Result<StepOutcome> {
        let n = self.config.n_agents;
        if actions.len() != n {
            return Err(Error::ActionCountMismatch {
                expected: n,
                got: actions.len(),
            });
        }
        if self.state.done {
            return Err(Error::InvalidParameter("episode is over; call reset".into()));
        }

        let offset = self.config.action_offset;
        for (k, a) in actions.iter().enumerate() {
            let p = self.state.agents[k].position();
            let mut w = self.state.trackers[k].x_sp.clone();
            w[0] = p[0] + offset * f64::from(a.ax);
            w[1] = p[1] + offset * f64::from(a.ay);
            self.state.trackers[k].target_point = w;
        }

        let mode = if self.config.filter_enforced() {
            FilterMode::Enforce
        } else {
            FilterMode::Monitor
        };
        let decisions = run_update_round_with(
            &mut self.state.trackers,
            &self.state.agents,
            &self.state.graph,
            &self.params,
            mode,
            self.config.update_order,
            self.state.t,
            |_, _| {},
        )?;

        for _ in 0..self.config.substeps {
            for (agent, tracker) in self.state.agents.iter_mut().zip(&self.state.trackers) {
                *agent = dynamics::step(&self.model, agent, &tracker.x_sp)?;
            }
        }
        self.advance_targets();
        self.rebuild_graph()?;

        let timestep = self.state.t;
        let activations: Vec<SafetyActivation> = decisions
            .iter()
            .filter(|d| d.is_activation())
            .map(|d| SafetyActivation {
                timestep,
                agent: d.agent_id,
                blockers: d.blockers.clone(),
            })
            .collect();
        let blocked: Vec<bool> = decisions.iter().map(SafetyDecision::is_activation).collect();
        let deadlocked = self
            .state
            .trackers
            .iter()
            .map(|t| detect_deadlock(t, self.config.deadlock_threshold))
            .collect();

        let reward = compute_reward_scaled(
            &self.state.graph,
            &self.state.agent_positions(),
            &self.state.target_positions(),
            PATH_BONUS,
            self.config.centroid_scale,
        )?;
        let safety_penalty = if self.config.variant.penalized() {
            self.config.penalty_value * activations.len() as f64
        } else {
            0.0
        };
        let joint_reward = reward.total + safety_penalty;

        self.state.t += 1;
        self.state.total_activations += activations.len();
        self.state.last_actions = actions.to_vec();
        self.state.last_blocked_agents = blocked.clone();
        self.state.last_blocked_pairs = activations
            .iter()
            .flat_map(|a| a.blockers.iter().map(move |&j| (a.agent.min(j), a.agent.max(j))))
            .collect();
        let truncated = self.state.t >= self.config.episode_len
            || (self.config.variant.truncates() && !activations.is_empty());
        self.state.done = truncated;

        Ok(StepOutcome {
            observations: self.observations()?,
            rewards: vec![joint_reward; n],
            reward,
            safety_penalty,
            joint_reward,
            terminated: false,
            truncated,
            info: StepInfo {
                decisions,
                activations,
                blocked,
                deadlocked,
            },
        })
    }

    /// Log record for the step that produced `outcome`.
    pub fn record(&self, actions: &[ActionPair], outcome: &StepOutcome) -> StepRecord {
        StepRecord {
            t: self.state.t - 1,
            actions: actions.iter().map(|a| a.index()).collect(),
            positions: self.state.agent_positions(),
            setpoints: self.state.trackers.iter().map(|t| t.x_sp.iter().copied().collect()).collect(),
            targets: self.state.target_positions(),
            activations: outcome.info.activations.clone(),
            reward: outcome.reward,
            safety_penalty: outcome.safety_penalty,
            joint_reward: outcome.joint_reward,
            truncated: outcome.truncated,
            edges: self
                .state
                .graph
                .edges()
                .into_iter()
                .map(|(a, b)| [a.to_string(), b.to_string()])
                .collect(),
        }
    }

    /// Test and scripting hook: place agents (at rest, setpoint on the position)
    /// and targets explicitly. Fails if the agent setpoints are not pairwise safe.
    pub fn place(&mut self, agents: &[[f64; 2]], targets: [[f64; 2]; 2]) -> Result<Vec<Observation>> {
        let n = self.config.n_agents;
        if agents.len() != n {
            return Err(Error::dim(n, agents.len()));
        }
        let setpoints: Vec<DVector<f64>> = agents.iter().map(|p| self.embed(*p)).collect();
        for i in 0..n {
            for j in (i + 1)..n {
                if ellipsoids_intersect(&self.params.p, self.params.c, &setpoints[i], &setpoints[j])? {
                    return Err(Error::UnsafeInitialConfiguration(i, j));
                }
            }
        }
        self.state.agents = setpoints.iter().map(|sp| AgentPhysState::at_rest(sp.clone())).collect();
        self.state.trackers = setpoints
            .into_iter()
            .enumerate()
            .map(|(k, sp)| SetpointTracker::new(k, sp))
            .collect();
        for (k, pos) in targets.into_iter().enumerate() {
            self.state.targets[k] = TargetState {
                pos,
                waypoint: pos,
                pause: 0,
            };
        }
        self.state.last_actions = vec![ActionPair::HOLD; n];
        self.state.last_blocked_agents = vec![false; n];
        self.state.last_blocked_pairs.clear();
        self.state.done = false;
        self.rebuild_graph()?;
        self.observations()
    }
}
