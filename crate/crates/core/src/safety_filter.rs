//! Decentralized setpoint filter.
//!
//! Each agent walks its setpoint toward the target point chosen by its policy in
//! P-norm steps of length `√c − √s`, and only once its state has entered
//! `𝓔_s(x_sp)`. Because `‖x − x'_sp‖_P ≤ ‖x − x_sp‖_P + ‖x_sp − x'_sp‖_P ≤ √c`,
//! the state is already inside the invariant set `𝓔_c(x'_sp)` of the new setpoint.
//! A candidate setpoint is accepted only if its `𝓔_c` ellipsoid stays disjoint
//! from the ellipsoid of every one-hop neighbor.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::comm_graph::DynamicCommGraph;
use crate::dynamics::{reached_setpoint, AgentPhysState, LtiModel};
use crate::error::{Error, Result};
use crate::invariant_sets::{
    shadow_in_ball, ellipsoids_intersect, p_norm_sq, project_to_plane, solve_lyapunov, InvariantEllipsoid,
    PositiveDefiniteMatrix, POSITION_AXES,
};

pub const DEFAULT_DEADLOCK_THRESHOLD: u32 = 10;

/// Fraction of the communication ball radius used by the semi-major axis of the
/// position shadow of `𝓔_c` when deriving parameters from a model.
pub const DEFAULT_BALL_FILL: f64 = 0.45;

#[derive(Debug, Clone)]
pub struct SafetyParams {
    pub p: PositiveDefiniteMatrix,
    pub c: f64,
    pub s: f64,
}

impl SafetyParams {
    pub fn new(p: PositiveDefiniteMatrix, c: f64, s: f64) -> Result<Self> {
        if !(s > 0.0 && s < c) || !c.is_finite() {
            return Err(Error::InvalidParameter(format!("need 0 < s < c, got s={s}, c={c}")));
        }
        Ok(Self { p, c, s })
    }

    /// Parameters for `model` with `P` from `Aᵀ P + P A = -I`, `c` sized so the
    /// position shadow of `𝓔_c` has semi-major axis `fill · ball_radius`, and
    /// `s = c / 4`.
    pub fn for_model(model: &LtiModel, ball_radius: f64, fill: f64) -> Result<Self> {
        if !(fill > 0.0 && fill <= 0.5) {
            return Err(Error::InvalidParameter(format!("fill must lie in (0, 0.5], got {fill}")));
        }
        let cert = solve_lyapunov(model.a(), &PositiveDefiniteMatrix::identity(model.dim()))?;
        let unit = InvariantEllipsoid::new(DVector::zeros(model.dim()), cert.p.clone(), 1.0)?;
        let unit_semi_major = project_to_plane(&unit, POSITION_AXES)?.semi_axes().0;
        let c = (fill * ball_radius / unit_semi_major).powi(2);
        Self::new(cert.p, c, c / 4.0)
    }

    pub fn dim(&self) -> usize {
        self.p.dim()
    }

    /// P-norm length of one setpoint step.
    pub fn step_length(&self) -> f64 {
        self.c.sqrt() - self.s.sqrt()
    }

    pub fn ellipsoid(&self, center: &DVector<f64>) -> Result<InvariantEllipsoid> {
        InvariantEllipsoid::new(center.clone(), self.p.clone(), self.c)
    }

    /// Worst-case projection-in-ball check: the agent may sit anywhere inside the
    /// shadow of its own ellipsoid, so it is placed at the tip of the major axis.
    pub fn shadow_fits_ball(&self, ball_radius: f64) -> Result<bool> {
        let e = self.ellipsoid(&DVector::zeros(self.dim()))?;
        let shadow = project_to_plane(&e, POSITION_AXES)?;
        let eig = shadow.shape.symmetric_eigen();
        let (k, _) = eig.eigenvalues.argmin();
        let dir = eig.eigenvectors.column(k);
        let a = shadow.semi_axes().0;
        shadow_in_ball(&e, [dir[0] * a, dir[1] * a], ball_radius)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetpointTracker {
    pub agent_id: usize,
    pub x_sp: DVector<f64>,
    pub target_point: DVector<f64>,
    pub blocked_streak: u32,
}

impl SetpointTracker {
    pub fn new(agent_id: usize, x_sp: DVector<f64>) -> Self {
        Self {
            agent_id,
            target_point: x_sp.clone(),
            x_sp,
            blocked_streak: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecisionReason {
    NotReached,
    Clear,
    Blocked,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafetyDecision {
    pub agent_id: usize,
    pub updated: bool,
    pub candidate: DVector<f64>,
    /// Neighbors whose `𝓔_c` ellipsoid meets the candidate's, ascending.
    pub blockers: Vec<usize>,
    pub reason: DecisionReason,
}

impl SafetyDecision {
    pub fn is_activation(&self) -> bool {
        !self.blockers.is_empty()
    }
}

/// One filter activation: `agent` was refused because of `blockers`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyActivation {
    pub timestep: usize,
    pub agent: usize,
    pub blockers: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateOrder {
    #[default]
    Ascending,
    /// Start at `round mod n` and wrap.
    RoundRobin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMode {
    /// Refuse unsafe candidates.
    Enforce,
    /// Record would-be activations but apply every candidate.
    Monitor,
}

/// Next setpoint on the ray toward the target point, one P-norm step away, or
/// the target point itself when it is closer than a step.
pub fn propose_setpoint(tracker: &SetpointTracker, params: &SafetyParams) -> Result<DVector<f64>> {
    let dir = &tracker.target_point - &tracker.x_sp;
    if dir.norm() <= 1e-12 {
        return Err(Error::DegenerateDirection);
    }
    let remaining = params.p.norm(&dir)?;
    let step = params.step_length();
    if remaining < step {
        return Ok(tracker.target_point.clone());
    }
    Ok(&tracker.x_sp + dir * (step / remaining))
}

/// Pure decision for one agent against the given neighbor setpoints.
pub fn decide_update(
    tracker: &SetpointTracker,
    state: &AgentPhysState,
    params: &SafetyParams,
    neighbor_setpoints: &[(usize, DVector<f64>)],
) -> Result<SafetyDecision> {
    if !reached_setpoint(state, &tracker.x_sp, &params.p, params.s)? {
        return Ok(SafetyDecision {
            agent_id: tracker.agent_id,
            updated: false,
            candidate: tracker.x_sp.clone(),
            blockers: Vec::new(),
            reason: DecisionReason::NotReached,
        });
    }
    let candidate = match propose_setpoint(tracker, params) {
        Ok(c) => c,
        // Already at the target point: keeping the current setpoint is always safe.
        Err(Error::DegenerateDirection) => tracker.x_sp.clone(),
        Err(e) => return Err(e),
    };
    let mut blockers = Vec::new();
    for (j, sp_j) in neighbor_setpoints {
        if *j != tracker.agent_id && ellipsoids_intersect(&params.p, params.c, &candidate, sp_j)? {
            blockers.push(*j);
        }
    }
    blockers.sort_unstable();
    blockers.dedup();
    let clear = blockers.is_empty();
    Ok(SafetyDecision {
        agent_id: tracker.agent_id,
        updated: clear,
        candidate,
        blockers,
        reason: if clear {
            DecisionReason::Clear
        } else {
            DecisionReason::Blocked
        },
    })
}

fn apply_decision(tracker: &mut SetpointTracker, state: &AgentPhysState, params: &SafetyParams, d: &SafetyDecision, mode: FilterMode) {
    match (d.reason, mode) {
        (DecisionReason::NotReached, _) => {}
        (DecisionReason::Clear, _) | (DecisionReason::Blocked, FilterMode::Monitor) => {
            debug_assert!(
                p_norm_sq(&params.p, &state.x, &d.candidate).map_or(true, |v| v <= params.c * (1.0 + 1e-9)),
                "state left the invariant set of the new setpoint"
            );
            tracker.x_sp = d.candidate.clone();
            tracker.blocked_streak = 0;
        }
        (DecisionReason::Blocked, FilterMode::Enforce) => {
            tracker.blocked_streak = tracker.blocked_streak.saturating_add(1);
        }
    }
}

/// One agent's filtered update against its one-hop neighbors' setpoints.
pub fn try_update_setpoint(
    tracker: &mut SetpointTracker,
    state: &AgentPhysState,
    params: &SafetyParams,
    neighbor_setpoints: &[(usize, DVector<f64>)],
) -> Result<SafetyDecision> {
    let d = decide_update(tracker, state, params, neighbor_setpoints)?;
    apply_decision(tracker, state, params, &d, FilterMode::Enforce);
    Ok(d)
}

/// First pair of setpoints whose `𝓔_c` ellipsoids meet, if any.
pub fn first_unsafe_pair(trackers: &[SetpointTracker], params: &SafetyParams) -> Result<Option<(usize, usize)>> {
    for i in 0..trackers.len() {
        for j in (i + 1)..trackers.len() {
            if ellipsoids_intersect(&params.p, params.c, &trackers[i].x_sp, &trackers[j].x_sp)? {
                return Ok(Some((trackers[i].agent_id, trackers[j].agent_id)));
            }
        }
    }
    Ok(None)
}

/// Order in which agents are processed during round `round`.
pub fn processing_order(n: usize, order: UpdateOrder, round: usize) -> Vec<usize> {
    match order {
        UpdateOrder::Ascending => (0..n).collect(),
        UpdateOrder::RoundRobin if n > 0 => (0..n).map(|k| (k + round) % n).collect(),
        UpdateOrder::RoundRobin => Vec::new(),
    }
}

/// Serialized update round in ascending agent order with immediate effect.
pub fn run_update_round(
    trackers: &mut [SetpointTracker],
    states: &[AgentPhysState],
    graph: &DynamicCommGraph,
    params: &SafetyParams,
) -> Result<Vec<SafetyDecision>> {
    run_update_round_with(
        trackers,
        states,
        graph,
        params,
        FilterMode::Enforce,
        UpdateOrder::Ascending,
        0,
        |_, _| {},
    )
}

/// Serialized update round. Agent `k` must sit at `trackers[k]` and `states[k]`.
///
/// `inspect` sees each decision together with the setpoints it was taken against,
/// before the decision is applied. Decisions are returned indexed by agent.
#[allow(clippy::too_many_arguments)]
pub fn run_update_round_with<F>(
    trackers: &mut [SetpointTracker],
    states: &[AgentPhysState],
    graph: &DynamicCommGraph,
    params: &SafetyParams,
    mode: FilterMode,
    order: UpdateOrder,
    round: usize,
    mut inspect: F,
) -> Result<Vec<SafetyDecision>>
where
    F: FnMut(&SafetyDecision, &[SetpointTracker]),
{
    let n = trackers.len();
    if states.len() != n {
        return Err(Error::dim(n, states.len()));
    }
    if let Some(k) = trackers.iter().enumerate().position(|(k, t)| t.agent_id != k) {
        return Err(Error::InvalidParameter(format!(
            "tracker at slot {k} has agent id {}",
            trackers[k].agent_id
        )));
    }
    if mode == FilterMode::Enforce {
        if let Some((i, j)) = first_unsafe_pair(trackers, params)? {
            return Err(Error::UnsafeInitialConfiguration(i, j));
        }
    }
    let mut decisions: Vec<Option<SafetyDecision>> = vec![None; n];
    for i in processing_order(n, order, round) {
        let neighbors: Vec<(usize, DVector<f64>)> = graph
            .agent_neighbors(i)?
            .into_iter()
            .filter(|&j| j < n)
            .map(|j| (j, trackers[j].x_sp.clone()))
            .collect();
        let d = decide_update(&trackers[i], &states[i], params, &neighbors)?;
        inspect(&d, trackers);
        apply_decision(&mut trackers[i], &states[i], params, &d, mode);
        decisions[i] = Some(d);
    }
    Ok(decisions.into_iter().map(|d| d.expect("every agent processed")).collect())
}

/// Diagnostic only: the agent has been refused `threshold` times in a row.
pub fn detect_deadlock(tracker: &SetpointTracker, threshold: u32) -> bool {
    tracker.blocked_streak >= threshold.max(1)
}
