//! Brute-force cross-checks of the geometric and safety results.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::oracle::{classify, minmax_bracket, sample_common_point, OracleVerdict};
use super::replay::replay_segment;
use crate::bridging_env::{
    compute_reward, ActionPair, BridgingEnv, EnvConfig, StepOutcome, TrajectoryHeader, TrajectorySegment, Variant,
};
use crate::comm_graph::{build_graph, DynamicCommGraph, EntityId};
use crate::dynamics::{self, AgentPhysState};
use crate::error::Result;
use crate::invariant_sets::{
    contains, ellipsoids_intersect, p_norm_sq, sample_boundary, solve_lyapunov, InvariantEllipsoid,
    LyapunovCertificate, PositiveDefiniteMatrix,
};
use crate::safety_filter::{
    first_unsafe_pair, processing_order, propose_setpoint, DecisionReason, SafetyParams, SetpointTracker,
};

/// Relative half-width of the band around the boundary excluded from agreement.
pub const BOUNDARY_BAND: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub elapsed_s: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// One line per check.
    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = format!("suite {} ({:.2}s)\n", self.suite, self.elapsed_s);
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("  {mark}  {:<width$}  {}\n", c.name, c.detail));
        }
        out
    }
}

fn random_spd<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let q = g.qr().q();
    let eig = DVector::<f64>::from_fn(n, |_, _| 10f64.powf(rng.random_range(-1.0..1.0)));
    let p = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    (&p + p.transpose()) * 0.5
}

fn random_vec<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub trials: usize,
    pub agreed: usize,
    pub disagreed: usize,
    pub in_band: usize,
    /// Outside the band but not decided by the bracket.
    pub unresolved: usize,
    /// Pairs declared disjoint for which sampling found a common point.
    pub sampling_contradictions: usize,
    /// Intersecting pairs for which sampling found a witness.
    pub sampling_witnesses: usize,
    pub coincident_ok: bool,
    pub constructed_disjoint_ok: bool,
    pub elapsed_s: f64,
}

impl GeometryReport {
    pub fn agreement_rate(&self) -> f64 {
        let judged = self.agreed + self.disagreed + self.unresolved;
        if judged == 0 {
            1.0
        } else {
            self.agreed as f64 / judged as f64
        }
    }

    pub fn passed(&self) -> bool {
        self.disagreed == 0
            && self.unresolved == 0
            && self.sampling_contradictions == 0
            && self.coincident_ok
            && self.constructed_disjoint_ok
    }
}

/// Compares the closed-form pairwise test against the min-max bracket oracle on
/// random SPD shapes in 2, 3 and 4 dimensions with level `c = 1`.
pub fn verify_geometry(seed: u64, trials: usize) -> Result<GeometryReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = GeometryReport {
        trials,
        ..Default::default()
    };
    let c = 1.0;
    for t in 0..trials {
        let n = 2 + t % 3;
        let p = random_spd(n, &mut rng);
        let pd = PositiveDefiniteMatrix::new(p.clone())?;
        let ci = random_vec(n, 1.0, &mut rng);
        // Separation ratio ‖d‖²_P / 4c: mostly spread out, some hugging the boundary.
        let ratio = match rng.random_range(0..10) {
            0..=4 => 2f64.powf(rng.random_range(-2.0..2.0)),
            5..=8 => 1.0 + rng.random_range(-1e-3..1e-3),
            _ => 1.0 + rng.random_range(-1e-7..1e-7),
        };
        let dir = DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal));
        let scale = (4.0 * c * ratio / dir.dot(&(&p * &dir))).sqrt();
        let cj = &ci + dir * scale;

        let claimed = ellipsoids_intersect(&pd, c, &ci, &cj)?;
        let verdict = classify(minmax_bracket(&p, &ci, &p, &cj), c, BOUNDARY_BAND);
        match verdict {
            OracleVerdict::Band => r.in_band += 1,
            OracleVerdict::Unresolved => r.unresolved += 1,
            OracleVerdict::Intersect | OracleVerdict::Disjoint => {
                if claimed == (verdict == OracleVerdict::Intersect) {
                    r.agreed += 1;
                } else {
                    r.disagreed += 1;
                }
            }
        }
        if verdict != OracleVerdict::Band {
            let found = sample_common_point(&p, c, &ci, &cj, 64, &mut rng).is_some();
            if found && !claimed {
                r.sampling_contradictions += 1;
            }
            if found && claimed {
                r.sampling_witnesses += 1;
            }
        }
    }

    let mut coincident_ok = true;
    let mut constructed_ok = true;
    for n in 2..=4 {
        let p = random_spd(n, &mut rng);
        let pd = PositiveDefiniteMatrix::new(p.clone())?;
        let ci = random_vec(n, 1.0, &mut rng);
        coincident_ok &= ellipsoids_intersect(&pd, c, &ci, &ci)?
            && classify(minmax_bracket(&p, &ci, &p, &ci), c, BOUNDARY_BAND) == OracleVerdict::Intersect;
        let dir = random_vec(n, 1.0, &mut rng);
        let cj = &ci + &dir * (4.41 * c / dir.dot(&(&p * &dir))).sqrt();
        constructed_ok &= !ellipsoids_intersect(&pd, c, &ci, &cj)?
            && classify(minmax_bracket(&p, &ci, &p, &cj), c, BOUNDARY_BAND) == OracleVerdict::Disjoint;
    }
    r.coincident_ok = coincident_ok;
    r.constructed_disjoint_ok = constructed_ok;
    r.elapsed_s = start.elapsed().as_secs_f64();
    Ok(r)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub draws: usize,
    pub points: usize,
    pub failures: usize,
    /// Largest `‖y - x'_sp‖²_P / c` over all sampled `y`.
    pub worst_ratio: f64,
    pub clamped_draws: usize,
}

/// Samples the boundary of `𝓔_s(x_sp)` and checks it lies in `𝓔_c(x'_sp)` for
/// the setpoint the filter proposes.
pub fn verify_containment(seed: u64, draws: usize, points_per_draw: usize) -> Result<ContainmentReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = ContainmentReport {
        draws,
        ..Default::default()
    };
    for k in 0..draws {
        let n = rng.random_range(2..=6);
        let p = PositiveDefiniteMatrix::new(random_spd(n, &mut rng))?;
        let c = 10f64.powf(rng.random_range(-3.0..1.0));
        let s = c * rng.random_range(0.01..0.99);
        let params = SafetyParams::new(p.clone(), c, s)?;
        let x_sp = random_vec(n, 1.0, &mut rng);
        let dir = DVector::<f64>::from_fn(n, |_, _| rng.sample(StandardNormal));
        let len = params.step_length() * rng.random_range(0.05..3.0) / p.norm(&dir)?;
        let mut tracker = SetpointTracker::new(0, x_sp.clone());
        tracker.target_point = &x_sp + dir * len;
        let next = propose_setpoint(&tracker, &params)?;
        if next == tracker.target_point {
            r.clamped_draws += 1;
        }
        let inner = InvariantEllipsoid::new(x_sp, p.clone(), s)?;
        let outer = InvariantEllipsoid::new(next.clone(), p.clone(), c)?;
        for y in sample_boundary(&inner, seed.wrapping_add(k as u64), points_per_draw) {
            r.points += 1;
            r.worst_ratio = r.worst_ratio.max(p_norm_sq(&p, &y, &next)? / c);
            if !contains(&outer, &y)? {
                r.failures += 1;
            }
        }
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub label: String,
    pub residual: f64,
    pub residual_bound: f64,
    pub trajectories: usize,
    /// Steps where `V` failed to decrease.
    pub increases: usize,
}

impl ModelReport {
    pub fn passed(&self) -> bool {
        self.residual <= self.residual_bound && self.increases == 0
    }
}

/// Lyapunov certificate with `Q = I` for each shipped model, and strict decrease
/// of `V(x) = xᵀ P x` along exact closed-loop trajectories toward the origin.
pub fn verify_models(seed: u64, trajectories: usize, steps: usize) -> Result<Vec<ModelReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for model in dynamics::default_models() {
        let q = PositiveDefiniteMatrix::identity(model.dim());
        let cert = solve_lyapunov(model.a(), &q)?;
        let p = cert.p.clone();
        let origin = DVector::zeros(model.dim());
        let mut increases = 0;
        for _ in 0..trajectories {
            let mut state = AgentPhysState {
                x: random_vec(model.dim(), 1.0, &mut rng),
                time: 0.0,
            };
            let mut v = p.quad_form(&state.x)?;
            for _ in 0..steps {
                state = dynamics::step(&model, &state, &origin)?;
                let next = p.quad_form(&state.x)?;
                if !(next < v || (v == 0.0 && next == 0.0)) {
                    increases += 1;
                }
                v = next;
            }
        }
        out.push(ModelReport {
            label: model.label().to_string(),
            residual: cert.residual,
            residual_bound: LyapunovCertificate::residual_bound(&q),
            trajectories,
            increases,
        });
    }
    Ok(out)
}

/// Counters from auditing environment steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepAudit {
    pub steps: usize,
    pub updates: usize,
    pub activations: usize,
    /// Setpoint pairs whose `𝓔_c` ellipsoids meet after a round.
    pub pair_violations: usize,
    /// Agent states inside another agent's `𝓔_c(x_sp)`.
    pub state_collisions: usize,
    /// Agent states outside their own `𝓔_c(x_sp)`.
    pub escapes: usize,
    /// Decisions whose blockers differ from an all-pairs recomputation, or
    /// blockers that are not graph neighbors.
    pub locality_violations: usize,
    /// Accepted updates where a boundary point of `𝓔_s(old)` left `𝓔_c(new)`.
    pub containment_failures: usize,
}

impl StepAudit {
    pub fn clean(&self) -> bool {
        self.pair_violations == 0
            && self.state_collisions == 0
            && self.escapes == 0
            && self.locality_violations == 0
            && self.containment_failures == 0
    }

    fn absorb(&mut self, o: &StepAudit) {
        self.steps += o.steps;
        self.updates += o.updates;
        self.activations += o.activations;
        self.pair_violations += o.pair_violations;
        self.state_collisions += o.state_collisions;
        self.escapes += o.escapes;
        self.locality_violations += o.locality_violations;
        self.containment_failures += o.containment_failures;
    }
}

/// Pre-step data needed to audit a step.
struct Snapshot {
    setpoints: Vec<DVector<f64>>,
    graph: DynamicCommGraph,
    t: usize,
}

impl Snapshot {
    fn take(env: &BridgingEnv) -> Self {
        let s = env.state();
        Self {
            setpoints: s.trackers.iter().map(|t| t.x_sp.clone()).collect(),
            graph: s.graph.clone(),
            t: s.t,
        }
    }
}

const CONTAINMENT_SAMPLES: usize = 16;

fn audit_step(env: &BridgingEnv, before: &Snapshot, out: &StepOutcome, audit: &mut StepAudit) -> Result<()> {
    let params = env.params();
    let (p, c) = (&params.p, params.c);
    let n = env.n_agents();
    audit.steps += 1;
    audit.activations += out.info.activations.len();

    // Re-run the serialized round against every agent, ignoring the graph.
    let mut current = before.setpoints.clone();
    for i in processing_order(n, env.config().update_order, before.t) {
        let d = &out.info.decisions[i];
        if d.reason != DecisionReason::NotReached {
            let mut all = Vec::new();
            for (j, sp) in current.iter().enumerate() {
                if j != i && ellipsoids_intersect(p, c, &d.candidate, sp)? {
                    all.push(j);
                }
            }
            let adjacent = d
                .blockers
                .iter()
                .map(|&j| before.graph.adjacent(EntityId::agent(i), EntityId::agent(j)))
                .collect::<Result<Vec<bool>>>()?;
            if all != d.blockers || adjacent.iter().any(|a| !a) {
                audit.locality_violations += 1;
            }
        }
        if d.updated {
            audit.updates += 1;
            let inner = InvariantEllipsoid::new(current[i].clone(), p.clone(), params.s)?;
            let outer = params.ellipsoid(&d.candidate)?;
            let seed = (before.t as u64) << 8 | i as u64;
            for y in sample_boundary(&inner, seed, CONTAINMENT_SAMPLES) {
                if !contains(&outer, &y)? {
                    audit.containment_failures += 1;
                }
            }
            current[i] = d.candidate.clone();
        }
    }

    let s = env.state();
    for i in 0..n {
        for j in (i + 1)..n {
            if ellipsoids_intersect(p, c, &s.trackers[i].x_sp, &s.trackers[j].x_sp)? {
                audit.pair_violations += 1;
            }
        }
    }
    for (i, agent) in s.agents.iter().enumerate() {
        for (j, tracker) in s.trackers.iter().enumerate() {
            let inside = p_norm_sq(p, &agent.x, &tracker.x_sp)? <= c;
            if i == j && !inside {
                audit.escapes += 1;
            }
            if i != j && inside {
                audit.state_collisions += 1;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub agents: usize,
    pub audit: StepAudit,
    pub expect_activation: Option<bool>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        let activation_ok = match self.expect_activation {
            Some(true) => self.audit.activations > 0,
            Some(false) => self.audit.activations == 0,
            None => true,
        };
        self.audit.clean() && activation_ok
    }
}

fn sign(d: f64, dead: f64) -> i8 {
    if d > dead {
        1
    } else if d < -dead {
        -1
    } else {
        0
    }
}

fn toward(from: [f64; 2], to: [f64; 2]) -> ActionPair {
    ActionPair {
        ax: sign(to[0] - from[0], 1e-3),
        ay: sign(to[1] - from[1], 1e-3),
    }
}

fn scenario_config(n_agents: usize, steps: usize) -> EnvConfig {
    EnvConfig {
        n_agents,
        episode_len: steps,
        static_targets: true,
        ..EnvConfig::default().with_variant(Variant::A)
    }
}

/// Runs a scripted scenario under the enforced filter, auditing every step.
fn run_scenario<F>(
    name: &str,
    config: EnvConfig,
    start: Option<&[[f64; 2]]>,
    seed: u64,
    expect_activation: Option<bool>,
    mut script: F,
) -> Result<ScenarioReport>
where
    F: FnMut(usize, &BridgingEnv) -> Vec<ActionPair>,
{
    let steps = config.episode_len;
    let mut env = BridgingEnv::new(config)?;
    env.reset(seed)?;
    if let Some(agents) = start {
        env.place(agents, [[0.02, 0.98], [0.98, 0.98]])?;
    }
    let mut audit = StepAudit::default();
    for t in 0..steps {
        let before = Snapshot::take(&env);
        let actions = script(t, &env);
        let out = env.step(&actions)?;
        audit_step(&env, &before, &out, &mut audit)?;
        if out.done() {
            break;
        }
    }
    Ok(ScenarioReport {
        name: name.to_string(),
        agents: env.n_agents(),
        audit,
        expect_activation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub scenarios: Vec<ScenarioReport>,
    pub elapsed_s: f64,
}

impl FilterReport {
    pub fn passed(&self) -> bool {
        self.scenarios.iter().all(ScenarioReport::passed)
    }

    pub fn total(&self) -> StepAudit {
        let mut t = StepAudit::default();
        for s in &self.scenarios {
            t.absorb(&s.audit);
        }
        t
    }
}

/// Adversarial scripted scenarios: head-on, a converging ring of six,
/// crossing paths, a random swarm and a lone agent.
pub fn verify_filter(seed: u64, steps: usize) -> Result<FilterReport> {
    let start = Instant::now();
    let mut scenarios = Vec::new();

    let head_on = [[0.35, 0.5], [0.65, 0.5]];
    scenarios.push(run_scenario(
        "head-on",
        scenario_config(2, steps),
        Some(&head_on),
        seed,
        Some(true),
        |_, env| {
            let s = env.state();
            let (a, b) = (s.agents[0].position(), s.agents[1].position());
            vec![toward(a, b), toward(b, a)]
        },
    )?);

    let center = [0.5, 0.5];
    let ring: Vec<[f64; 2]> = (0..6)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / 6.0;
            [center[0] + 0.15 * th.cos(), center[1] + 0.15 * th.sin()]
        })
        .collect();
    scenarios.push(run_scenario(
        "converging-ring-6",
        scenario_config(6, steps),
        Some(&ring),
        seed,
        Some(true),
        |_, env| env.state().agents.iter().map(|a| toward(a.position(), center)).collect(),
    )?);

    // Four agents swap across the center; goals flip on arrival.
    let cross = [[0.3, 0.5], [0.7, 0.5], [0.5, 0.3], [0.5, 0.7]];
    let mut goals = [cross[1], cross[0], cross[3], cross[2]];
    scenarios.push(run_scenario(
        "crossing",
        scenario_config(4, steps),
        Some(&cross),
        seed,
        Some(true),
        move |_, env| {
            let s = env.state();
            (0..4)
                .map(|k| {
                    let p = s.agents[k].position();
                    if (p[0] - goals[k][0]).hypot(p[1] - goals[k][1]) < 0.02 {
                        goals[k] = [1.0 - goals[k][0], 1.0 - goals[k][1]];
                    }
                    let a = toward(p, goals[k]);
                    if s.last_blocked_agents[k] {
                        ActionPair { ax: -a.ay, ay: a.ax }
                    } else {
                        a
                    }
                })
                .collect()
        },
    )?);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let swarm = EnvConfig {
        n_agents: 5,
        static_targets: false,
        ..scenario_config(5, steps)
    };
    scenarios.push(run_scenario("random-swarm-5", swarm, None, seed, None, |_, env| {
        (0..env.n_agents())
            .map(|_| ActionPair::from_index(rng.random_range(0..ActionPair::COUNT)).expect("index in range"))
            .collect()
    })?);

    let single = [[0.5, 0.5]];
    let mut heading = 1i8;
    scenarios.push(run_scenario(
        "single-agent",
        scenario_config(1, steps),
        Some(&single),
        seed,
        Some(false),
        move |t, _| {
            if t % 50 == 0 {
                heading = -heading;
            }
            vec![ActionPair { ax: heading, ay: 1 }]
        },
    )?);

    Ok(FilterReport {
        scenarios,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityReport {
    pub episodes: usize,
    pub audit: StepAudit,
    /// Blocked (agent, blocker) pairs checked for adjacency.
    pub blocking_pairs: usize,
    pub non_adjacent_pairs: usize,
}

impl LocalityReport {
    pub fn passed(&self) -> bool {
        self.non_adjacent_pairs == 0 && self.audit.clean()
    }
}

/// Random-policy episodes over every variant and several team sizes; every
/// recorded blocking pair must be adjacent in the graph of that step.
pub fn verify_locality(seed: u64, episodes: usize) -> Result<LocalityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut audit = StepAudit::default();
    let (mut pairs, mut non_adjacent) = (0, 0);
    let filtered = [Variant::A, Variant::ANode, Variant::B, Variant::C];
    for k in 0..episodes {
        let mut cfg = EnvConfig::default().with_variant(filtered[k % filtered.len()]);
        cfg.n_agents = [3, 4, 6][k % 3];
        let mut env = BridgingEnv::new(cfg)?;
        // Validates the projection-in-ball requirement for these parameters.
        debug_assert!(env.params().shadow_fits_ball(env.config().ball_radius())?);
        env.reset(seed.wrapping_add(k as u64))?;
        loop {
            let before = Snapshot::take(&env);
            let actions: Vec<ActionPair> = (0..env.n_agents())
                .map(|_| ActionPair::from_index(rng.random_range(0..ActionPair::COUNT)))
                .collect::<Result<_>>()?;
            let out = env.step(&actions)?;
            for a in &out.info.activations {
                for &b in &a.blockers {
                    pairs += 1;
                    if !before.graph.adjacent(EntityId::agent(a.agent), EntityId::agent(b))? {
                        non_adjacent += 1;
                    }
                }
            }
            audit_step(&env, &before, &out, &mut audit)?;
            if out.done() {
                break;
            }
        }
    }
    Ok(LocalityReport {
        episodes,
        audit,
        blocking_pairs: pairs,
        non_adjacent_pairs: non_adjacent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardCase {
    pub name: String,
    pub expected: f64,
    pub got: f64,
}

/// The hand-computed reward cases, evaluated exactly.
pub fn reward_cases() -> Result<Vec<RewardCase>> {
    let graph = |agents: &[[f64; 2]], targets: &[[f64; 2]; 2]| {
        let mut pos: Vec<_> = agents.iter().enumerate().map(|(k, p)| (EntityId::agent(k), *p)).collect();
        pos.push((EntityId::target(0), targets[0]));
        pos.push((EntityId::target(1), targets[1]));
        build_graph(&pos, 0.2)
    };
    let mut out = Vec::new();

    let targets = [[0.1, 0.5], [0.7, 0.5]];
    let agents = [[0.25, 0.5], [0.4, 0.5], [0.55, 0.5]];
    let r = compute_reward(&graph(&agents, &targets)?, &agents, &targets)?;
    out.push(RewardCase {
        name: "path exists".into(),
        expected: 100.0,
        got: r.total,
    });

    let targets = [[0.0, 0.5], [1.0, 0.5]];
    let agents = [[0.5, 0.0], [0.5, 1.0], [0.5, 0.5]];
    let r = compute_reward(&graph(&agents, &targets)?, &agents, &targets)?;
    out.push(RewardCase {
        name: "five isolated entities".into(),
        expected: 0.2,
        got: r.base,
    });

    let agents = [[0.45, 0.72], [0.55, 0.72], [0.5, 0.81]];
    let r = compute_reward(&graph(&agents, &targets)?, &agents, &targets)?;
    out.push(RewardCase {
        name: "three-agent component".into(),
        // base 3/5 minus centroid offset 0.25
        expected: 0.35,
        got: r.total,
    });
    Ok(out)
}

impl RewardCase {
    /// Agreement to the last couple of ulps of the expected value.
    pub fn passed(&self) -> bool {
        (self.got - self.expected).abs() <= 4.0 * f64::EPSILON * self.expected.abs()
    }
}

fn random_episode(cfg: &EnvConfig, seed: u64) -> Result<TrajectorySegment> {
    let mut env = BridgingEnv::new(cfg.clone())?;
    env.reset(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let mut steps = Vec::new();
    loop {
        let actions: Vec<ActionPair> = (0..env.n_agents())
            .map(|_| ActionPair::from_index(rng.random_range(0..ActionPair::COUNT)))
            .collect::<Result<_>>()?;
        let out = env.step(&actions)?;
        steps.push(env.record(&actions, &out));
        if out.done() {
            break;
        }
    }
    Ok(TrajectorySegment {
        header: TrajectoryHeader::new(0, seed, cfg),
        steps,
    })
}

/// Environment-level checks: reward cases, safe initial placement, determinism,
/// replay and locality.
pub fn verify_env(seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut checks = Vec::new();

    for case in reward_cases()? {
        checks.push(Check::new(
            format!("reward: {}", case.name),
            case.passed(),
            format!("expected {} got {}", case.expected, case.got),
        ));
    }

    let cfg = EnvConfig::default();
    let mut env = BridgingEnv::new(cfg.clone())?;
    let fits = env.params().shadow_fits_ball(cfg.ball_radius())?;
    checks.push(Check::new(
        "ellipsoid shadow fits the ball",
        fits,
        format!("c={:.3e} s={:.3e}", env.params().c, env.params().s),
    ));
    let mut unsafe_resets = 0;
    for k in 0..200 {
        env.reset(seed.wrapping_add(k))?;
        if first_unsafe_pair(&env.state().trackers, env.params())?.is_some() {
            unsafe_resets += 1;
        }
    }
    checks.push(Check::new(
        "initial setpoints pairwise safe",
        unsafe_resets == 0,
        format!("{unsafe_resets} of 200 resets unsafe"),
    ));

    let a = random_episode(&cfg, seed)?;
    let b = random_episode(&cfg, seed)?;
    checks.push(Check::new(
        "same seed, same trajectory",
        a == b,
        format!("{} steps", a.steps.len()),
    ));
    let replayed = replay_segment(&a);
    checks.push(Check::new(
        "replay reproduces trajectory",
        replayed.is_ok(),
        match &replayed {
            Ok(n) => format!("{n} steps identical"),
            Err(e) => e.to_string(),
        },
    ));
    let mut tampered = a.clone();
    if let Some(rec) = tampered.steps.get_mut(5) {
        rec.reward.total += 1e-9;
    }
    let caught = matches!(replay_segment(&tampered), Err(crate::Error::DivergenceAt { step: 5, .. }));
    checks.push(Check::new("replay catches tampering", caught, "reward at step 5 nudged"));

    let loc = verify_locality(seed, 30)?;
    checks.push(Check::new(
        "blocking pairs are graph neighbors",
        loc.passed(),
        format!(
            "{} episodes, {} blocking pairs, {} non-adjacent, {} decision mismatches",
            loc.episodes, loc.blocking_pairs, loc.non_adjacent_pairs, loc.audit.locality_violations
        ),
    ));

    Ok(SuiteReport {
        suite: "env".into(),
        checks,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

/// Oracle agreement, setpoint containment and Lyapunov certificates.
pub fn geometry_suite(seed: u64, trials: usize) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut checks = Vec::new();
    let g = verify_geometry(seed, trials)?;
    checks.push(Check::new(
        "pairwise test vs min-max oracle",
        g.disagreed == 0 && g.unresolved == 0,
        format!(
            "{} trials, agreement {:.4}% outside band ({} in band, {} unresolved)",
            g.trials,
            100.0 * g.agreement_rate(),
            g.in_band,
            g.unresolved
        ),
    ));
    checks.push(Check::new(
        "pairwise test vs sampling",
        g.sampling_contradictions == 0,
        format!(
            "{} contradictions, {} sampled witnesses",
            g.sampling_contradictions, g.sampling_witnesses
        ),
    ));
    checks.push(Check::new("coincident centers intersect", g.coincident_ok, ""));
    checks.push(Check::new("separation 4.41c is disjoint", g.constructed_disjoint_ok, ""));

    let c = verify_containment(seed, 1000, 1000)?;
    checks.push(Check::new(
        "setpoint step keeps inner set inside",
        c.failures == 0,
        format!(
            "{} draws, {} points, {} failures, worst ratio {:.12}",
            c.draws, c.points, c.failures, c.worst_ratio
        ),
    ));

    for m in verify_models(seed, 100, 100)? {
        checks.push(Check::new(
            format!("lyapunov certificate: {}", m.label),
            m.passed(),
            format!(
                "residual {:.2e} <= {:.2e}, {} increases over {} trajectories",
                m.residual, m.residual_bound, m.increases, m.trajectories
            ),
        ));
    }
    Ok(SuiteReport {
        suite: "geometry".into(),
        checks,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

pub fn filter_suite(seed: u64, steps: usize) -> Result<SuiteReport> {
    let start = Instant::now();
    let f = verify_filter(seed, steps)?;
    let checks = f
        .scenarios
        .iter()
        .map(|s| {
            let a = &s.audit;
            Check::new(
                format!("scenario {}", s.name),
                s.passed(),
                format!(
                    "{} steps, {} updates, {} activations, {} pair violations, {} state collisions, {} escapes, {} locality, {} containment",
                    a.steps,
                    a.updates,
                    a.activations,
                    a.pair_violations,
                    a.state_collisions,
                    a.escapes,
                    a.locality_violations,
                    a.containment_failures
                ),
            )
        })
        .collect();
    Ok(SuiteReport {
        suite: "filter".into(),
        checks,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}
