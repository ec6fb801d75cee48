use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{backward, forward_q, forward_trace, Group, NetShape, QNetworkParams, DEFAULT_HIDDEN};
use super::policy::{argmax, epsilon_at, select_action};
use super::replay::{ReplayBuffer, Transition};
use crate::bridging_env::{ActionPair, BridgingEnv, EnvConfig, Observation, StepOutcome};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Environment steps (each yields one transition per agent).
    pub total_steps: usize,
    pub batch: usize,
    pub gamma: f64,
    pub lr: f64,
    pub grad_clip: f64,
    /// Gradient updates between target-network copies.
    pub target_sync: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Share of `total_steps` over which ε anneals.
    pub eps_fraction: f64,
    pub buffer_capacity: usize,
    /// Transitions collected before the first update.
    pub learning_starts: usize,
    /// Environment steps between gradient updates.
    pub train_every: usize,
    pub hidden: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 50_000,
            batch: 64,
            gamma: 0.99,
            lr: 3e-4,
            grad_clip: 10.0,
            target_sync: 1000,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_fraction: 0.2,
            buffer_capacity: ReplayBuffer::DEFAULT_CAPACITY,
            learning_starts: 1000,
            train_every: 1,
            hidden: DEFAULT_HIDDEN,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.batch == 0 || self.buffer_capacity == 0 || self.train_every == 0 || self.hidden == 0 {
            return bad("batch, buffer_capacity, train_every and hidden must be positive");
        }
        if self.target_sync == 0 {
            return bad("target_sync must be positive");
        }
        if !(self.lr > 0.0) || !(self.grad_clip > 0.0) {
            return bad("lr and grad_clip must be positive");
        }
        for e in [self.eps_start, self.eps_end] {
            if !(0.0..=1.0).contains(&e) {
                return bad("epsilon bounds must lie in [0, 1]");
            }
        }
        if !(0.0..=1.0).contains(&self.eps_fraction) {
            return bad("eps_fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

fn td_target(target: &QNetworkParams, t: &Transition, gamma: f64) -> Result<f64> {
    if t.done || gamma == 0.0 {
        return Ok(t.reward);
    }
    let (q, _) = forward_q(target, &t.next_obs, &t.next_rec)?;
    Ok(t.reward + gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Mean squared one-step TD error and its gradient with respect to `params`.
pub fn td_loss_grad(
    params: &QNetworkParams,
    target: &QNetworkParams,
    batch: &[&Transition],
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let mut dq = vec![0.0; super::network::N_ACTIONS];
    for t in batch {
        let y = td_target(target, t, gamma)?;
        let trace = forward_trace(params, &t.obs, &t.rec)?;
        let err = trace.q[t.action] - y;
        loss += scale * err * err;
        dq.iter_mut().for_each(|v| *v = 0.0);
        dq[t.action] = 2.0 * scale * err;
        backward(params, &trace, &dq, &mut grad);
    }
    Ok((loss, grad))
}

pub fn td_loss(params: &QNetworkParams, target: &QNetworkParams, batch: &[&Transition], gamma: f64) -> Result<f64> {
    let mut loss = 0.0;
    for t in batch {
        let y = td_target(target, t, gamma)?;
        let (q, _) = forward_q(params, &t.obs, &t.rec)?;
        loss += (q[t.action] - y).powi(2);
    }
    Ok(loss / batch.len() as f64)
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn clip(grad: &mut [f64], max_norm: f64) {
    let n = l2(grad);
    if n > max_norm {
        let k = max_norm / n;
        grad.iter_mut().for_each(|g| *g *= k);
    }
}

fn non_finite(update: u64, loss: f64, grad: &[f64], params: &QNetworkParams, batch: &[&Transition]) -> Error {
    let (lo, hi) = batch
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t.reward), hi.max(t.reward)));
    Error::NonFiniteLoss {
        update,
        detail: format!(
            "loss={loss} grad_norm={} param_norm={} finite_params={} batch={} reward_range=[{lo}, {hi}]",
            l2(grad),
            l2(params.data()),
            params.is_finite(),
            batch.len()
        ),
    }
}

/// One plain SGD step on the TD loss with gradient-norm clipping. Returns the
/// loss before the step.
pub fn td_update(
    params: &mut QNetworkParams,
    target: &QNetworkParams,
    batch: &[&Transition],
    gamma: f64,
    lr: f64,
    grad_clip: f64,
) -> Result<f64> {
    let (loss, mut grad) = td_loss_grad(params, target, batch, gamma)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(non_finite(0, loss, &grad, params, batch));
    }
    clip(&mut grad, grad_clip);
    for (p, g) in params.data_mut().iter_mut().zip(&grad) {
        *p -= lr * g;
    }
    Ok(loss)
}

#[derive(Debug, Clone)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Online network, target network and optimizer state.
#[derive(Debug, Clone)]
pub struct QLearner {
    pub online: QNetworkParams,
    pub target: QNetworkParams,
    updates: u64,
    adam: Option<AdamState>,
    gamma: f64,
    lr: f64,
    grad_clip: f64,
    target_sync: u64,
}

impl QLearner {
    pub fn new(params: QNetworkParams, cfg: &TrainConfig) -> Self {
        let adam = (cfg.optimizer == OptimizerKind::Adam).then(|| AdamState {
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            t: 0,
        });
        Self {
            target: params.clone(),
            online: params,
            updates: 0,
            adam,
            gamma: cfg.gamma,
            lr: cfg.lr,
            grad_clip: cfg.grad_clip,
            target_sync: cfg.target_sync,
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn update(&mut self, batch: &[&Transition]) -> Result<f64> {
        let (loss, mut grad) = td_loss_grad(&self.online, &self.target, batch, self.gamma)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(non_finite(self.updates, loss, &grad, &self.online, batch));
        }
        clip(&mut grad, self.grad_clip);
        match &mut self.adam {
            None => {
                for (p, g) in self.online.data_mut().iter_mut().zip(&grad) {
                    *p -= self.lr * g;
                }
            }
            Some(st) => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                st.t += 1;
                let c1 = 1.0 - B1.powi(st.t);
                let c2 = 1.0 - B2.powi(st.t);
                for (i, p) in self.online.data_mut().iter_mut().enumerate() {
                    st.m[i] = B1 * st.m[i] + (1.0 - B1) * grad[i];
                    st.v[i] = B2 * st.v[i] + (1.0 - B2) * grad[i] * grad[i];
                    *p -= self.lr * (st.m[i] / c1) / ((st.v[i] / c2).sqrt() + EPS);
                }
            }
        }
        self.updates += 1;
        if self.updates.is_multiple_of(self.target_sync) {
            self.target = self.online.clone();
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupGradError {
    pub group: Group,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub rel_error: f64,
}

/// Analytic TD-loss gradient against central finite differences, per group.
pub fn gradient_check(
    params: &QNetworkParams,
    target: &QNetworkParams,
    batch: &[&Transition],
    gamma: f64,
    step: f64,
) -> Result<Vec<GroupGradError>> {
    let (_, grad) = td_loss_grad(params, target, batch, gamma)?;
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(Group::ALL.len());
    for g in Group::ALL {
        let range = params.range(g);
        let mut diff = 0.0;
        let mut an = 0.0;
        let mut nn = 0.0;
        for i in range {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + step;
            let hi = td_loss(&probe, target, batch, gamma)?;
            probe.data_mut()[i] = orig - step;
            let lo = td_loss(&probe, target, batch, gamma)?;
            probe.data_mut()[i] = orig;
            let fd = (hi - lo) / (2.0 * step);
            diff += (fd - grad[i]).powi(2);
            an += grad[i] * grad[i];
            nn += fd * fd;
        }
        let (diff, an, nn) = (diff.sqrt(), an.sqrt(), nn.sqrt());
        let denom = an.max(nn);
        out.push(GroupGradError {
            group: g,
            analytic_norm: an,
            numeric_norm: nn,
            rel_error: if denom == 0.0 { 0.0 } else { diff / denom },
        });
    }
    Ok(out)
}

/// Decentralized actor: each agent acts from its own observation and state.
pub trait Policy {
    fn begin_episode(&mut self, n_agents: usize, episode_seed: u64);
    fn act(&mut self, env: &BridgingEnv, obs: &[Observation]) -> Result<Vec<ActionPair>>;
}

/// ε = 0 actor over a shared parameter set.
pub struct GreedyPolicy<'a> {
    params: &'a QNetworkParams,
    rec: Vec<Vec<f64>>,
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(params: &'a QNetworkParams) -> Self {
        Self { params, rec: Vec::new() }
    }
}

impl Policy for GreedyPolicy<'_> {
    fn begin_episode(&mut self, n_agents: usize, _episode_seed: u64) {
        self.rec = vec![vec![0.0; self.params.shape().hidden]; n_agents];
    }

    fn act(&mut self, _env: &BridgingEnv, obs: &[Observation]) -> Result<Vec<ActionPair>> {
        let mut actions = Vec::with_capacity(obs.len());
        for (o, rec) in obs.iter().zip(self.rec.iter_mut()) {
            let (q, next) = forward_q(self.params, o, rec)?;
            *rec = next;
            actions.push(ActionPair::from_index(argmax(&q))?);
        }
        Ok(actions)
    }
}

/// Frozen uniform-random actor, reseeded per episode.
pub struct UniformRandomPolicy {
    rng: ChaCha8Rng,
}

impl Default for UniformRandomPolicy {
    fn default() -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

impl Policy for UniformRandomPolicy {
    fn begin_episode(&mut self, _n_agents: usize, episode_seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(episode_seed ^ 0x5eed_0f7a_4d0f);
    }

    fn act(&mut self, _env: &BridgingEnv, obs: &[Observation]) -> Result<Vec<ActionPair>> {
        obs.iter()
            .map(|_| ActionPair::from_index(rand::Rng::random_range(&mut self.rng, 0..ActionPair::COUNT)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub seed: u64,
    pub steps: usize,
    /// Percentage of steps with a target-to-target path.
    pub coverage: f64,
    /// Blocked agent updates summed over the episode.
    pub activations: usize,
    /// Sum of shared rewards.
    #[serde(rename = "return")]
    pub episode_return: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population statistics; zero for an empty slice.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: Vec<EpisodeMetrics>,
    pub coverage: MeanStd,
    pub activations: MeanStd,
    #[serde(rename = "return")]
    pub episode_return: MeanStd,
}

impl EvalReport {
    pub fn from_episodes(episodes: Vec<EpisodeMetrics>) -> Self {
        let col = |f: fn(&EpisodeMetrics) -> f64| MeanStd::of(&episodes.iter().map(f).collect::<Vec<_>>());
        Self {
            coverage: col(|e| e.coverage),
            activations: col(|e| e.activations as f64),
            episode_return: col(|e| e.episode_return),
            episodes,
        }
    }
}

/// Runs one episode to completion, calling `on_step` after every step.
pub fn run_episode<F>(
    env: &mut BridgingEnv,
    policy: &mut dyn Policy,
    episode: usize,
    seed: u64,
    on_step: &mut F,
) -> Result<EpisodeMetrics>
where
    F: FnMut(&BridgingEnv, &[ActionPair], &StepOutcome) -> Result<()>,
{
    let mut obs = env.reset(seed)?;
    policy.begin_episode(env.n_agents(), seed);
    let (mut steps, mut path_steps, mut activations, mut ret) = (0, 0, 0, 0.0);
    loop {
        let actions = policy.act(env, &obs)?;
        let out = env.step(&actions)?;
        on_step(env, &actions, &out)?;
        steps += 1;
        path_steps += usize::from(out.reward.path_exists());
        activations += out.info.activations.len();
        ret += out.joint_reward;
        if out.done() {
            break;
        }
        obs = out.observations;
    }
    Ok(EpisodeMetrics {
        episode,
        seed,
        steps,
        coverage: 100.0 * path_steps as f64 / env.config().episode_len as f64,
        activations,
        episode_return: ret,
    })
}

/// Evaluation protocol: filter always enforced, episode `k` uses seed `seed_base + k`.
pub fn evaluate_policy_with<F>(
    policy: &mut dyn Policy,
    env_config: &EnvConfig,
    n_episodes: usize,
    seed_base: u64,
    mut on_step: F,
) -> Result<EvalReport>
where
    F: FnMut(usize, &BridgingEnv, &[ActionPair], &StepOutcome) -> Result<()>,
{
    let mut cfg = env_config.clone();
    cfg.force_filter = true;
    let mut env = BridgingEnv::new(cfg)?;
    let mut episodes = Vec::with_capacity(n_episodes);
    for k in 0..n_episodes {
        let seed = seed_base.wrapping_add(k as u64);
        let mut hook = |e: &BridgingEnv, a: &[ActionPair], o: &StepOutcome| on_step(k, e, a, o);
        episodes.push(run_episode(&mut env, policy, k, seed, &mut hook)?);
    }
    Ok(EvalReport::from_episodes(episodes))
}

pub fn evaluate_policy(
    policy: &mut dyn Policy,
    env_config: &EnvConfig,
    n_episodes: usize,
    seed_base: u64,
) -> Result<EvalReport> {
    evaluate_policy_with(policy, env_config, n_episodes, seed_base, |_, _, _, _| Ok(()))
}

/// Greedy evaluation of a trained parameter set.
pub fn evaluate(params: &QNetworkParams, env_config: &EnvConfig, n_episodes: usize, seed_base: u64) -> Result<EvalReport> {
    check_dims(params, env_config)?;
    evaluate_policy(&mut GreedyPolicy::new(params), env_config, n_episodes, seed_base)
}

pub fn check_dims(params: &QNetworkParams, env_config: &EnvConfig) -> Result<()> {
    let s = params.shape();
    if s.node_dim != env_config.node_dim() || s.edge_dim != env_config.edge_dim() {
        return Err(Error::ShapeMismatch(format!(
            "network expects node/edge dims {}/{}, environment produces {}/{}",
            s.node_dim,
            s.edge_dim,
            env_config.node_dim(),
            env_config.edge_dim()
        )));
    }
    Ok(())
}

/// One finished training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub episode: usize,
    /// Environment steps completed when the episode ended.
    pub env_steps: usize,
    pub seed: u64,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub activations: usize,
    pub coverage: f64,
    pub epsilon: f64,
    pub updates: u64,
    /// Mean TD loss over the episode's updates, if any ran.
    pub mean_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: QNetworkParams,
    pub curve: Vec<CurveRecord>,
    pub updates: u64,
}

pub fn train(env_config: &EnvConfig, cfg: &TrainConfig) -> Result<TrainOutput> {
    train_with(env_config, cfg, |_| Ok(()))
}

/// Shared-parameter independent Q-learning. Every agent acts from the same
/// network and feeds the same replay buffer; `on_episode` sees each finished
/// episode. Only complete episodes are reported.
pub fn train_with<F>(env_config: &EnvConfig, cfg: &TrainConfig, mut on_episode: F) -> Result<TrainOutput>
where
    F: FnMut(&CurveRecord) -> Result<()>,
{
    cfg.validate()?;
    let shape = NetShape::for_variant(env_config.n_agents, env_config.variant, cfg.hidden);
    let mut learner = QLearner::new(QNetworkParams::init(shape, cfg.seed), cfg);
    let mut curve = Vec::new();
    if cfg.total_steps == 0 {
        return Ok(TrainOutput {
            params: learner.online,
            curve,
            updates: 0,
        });
    }

    let mut env = BridgingEnv::new(env_config.clone())?;
    let n = env.n_agents();
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    seeds.set_stream(1);
    let mut act_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    act_rng.set_stream(2);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    sample_rng.set_stream(3);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);

    let mut episode = 0;
    let mut ep_seed: u64 = rand::Rng::random(&mut seeds);
    let mut obs = env.reset(ep_seed)?;
    let mut rec = vec![vec![0.0; cfg.hidden]; n];
    let (mut ret, mut acts, mut path_steps, mut loss_sum, mut loss_n) = (0.0, 0, 0, 0.0, 0usize);

    for step in 0..cfg.total_steps {
        let eps = epsilon_at(step, cfg.total_steps, cfg.eps_start, cfg.eps_end, cfg.eps_fraction);
        let mut actions = Vec::with_capacity(n);
        let mut next_rec = Vec::with_capacity(n);
        for k in 0..n {
            let (q, r) = forward_q(&learner.online, &obs[k], &rec[k])?;
            actions.push(ActionPair::from_index(select_action(&q, eps, &mut act_rng))?);
            next_rec.push(r);
        }
        let out = env.step(&actions)?;
        let done = out.done();
        for k in 0..n {
            buffer.push(Transition {
                obs: obs[k].clone(),
                action: actions[k].index(),
                reward: out.joint_reward,
                next_obs: out.observations[k].clone(),
                done,
                rec: rec[k].clone(),
                next_rec: next_rec[k].clone(),
            });
        }
        ret += out.joint_reward;
        acts += out.info.activations.len();
        path_steps += usize::from(out.reward.path_exists());

        if buffer.len() >= cfg.learning_starts.max(cfg.batch) && (step + 1) % cfg.train_every == 0 {
            let batch = buffer.sample(cfg.batch, &mut sample_rng);
            loss_sum += learner.update(&batch)?;
            loss_n += 1;
        }

        if done {
            let record = CurveRecord {
                episode,
                env_steps: step + 1,
                seed: ep_seed,
                episode_return: ret,
                activations: acts,
                coverage: 100.0 * path_steps as f64 / env.config().episode_len as f64,
                epsilon: eps,
                updates: learner.updates(),
                mean_loss: (loss_n > 0).then(|| loss_sum / loss_n as f64),
            };
            on_episode(&record)?;
            curve.push(record);
            episode += 1;
            ep_seed = rand::Rng::random(&mut seeds);
            obs = env.reset(ep_seed)?;
            rec = vec![vec![0.0; cfg.hidden]; n];
            (ret, acts, path_steps, loss_sum, loss_n) = (0.0, 0, 0, 0.0, 0);
        } else {
            obs = out.observations;
            rec = next_rec;
        }
    }
    Ok(TrainOutput {
        updates: learner.updates(),
        params: learner.online,
        curve,
    })
}
