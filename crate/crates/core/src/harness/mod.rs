//! Run configuration, metrics persistence, replay and the verification suites.

mod oracle;
mod replay;
mod verify;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use oracle::{classify, minmax_bracket, sample_common_point, MinMaxBracket, OracleVerdict};
pub use replay::{replay, replay_segment, ReplayReport};
pub use verify::{
    filter_suite, geometry_suite, reward_cases, verify_containment, verify_env, verify_filter, verify_geometry,
    verify_locality, verify_models, Check, ContainmentReport, FilterReport, GeometryReport, LocalityReport,
    ModelReport, RewardCase, ScenarioReport, StepAudit, SuiteReport, BOUNDARY_BAND,
};

use crate::bridging_env::{EnvConfig, TrajectoryHeader, TrajectoryWriter, Variant};
use crate::error::{Error, Result};
use crate::fingerprint::fingerprint;
use crate::learner::{
    check_dims, evaluate_policy_with, train_with, Checkpoint, CurveRecord, EpisodeMetrics, EvalReport, GreedyPolicy,
    MeanStd, TrainConfig, TrainOutput,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Train,
    Eval,
    Verify,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Master seed; training uses it unless `[train] seed` says otherwise.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub eval_episodes: usize,
    /// Evaluation episode `k` uses seed `eval_seed_base + k`.
    pub eval_seed_base: u64,
    /// Adds elapsed seconds to metrics records (makes them non-reproducible).
    pub record_wall_clock: bool,
    pub env: EnvConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Train,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            eval_episodes: 100,
            eval_seed_base: 1_000_000,
            record_wall_clock: false,
            env: EnvConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

const SCHEMA_HEADER: &str = "\
# bridgesafe run configuration (TOML). Every key is optional; unknown keys are
# rejected. Values below are the defaults.
#
# mode              train | eval | verify | replay
# seed              master seed; copied into [train] seed when that is unset
# output_dir        checkpoint, metrics and trajectory files go here
# eval_episodes     episodes per evaluation
# eval_seed_base    evaluation episode k uses seed eval_seed_base + k
# record_wall_clock add elapsed seconds to metrics records
#
# [env]   variant: baseline | a | a-node | b | c
#         model: quad-12 | planar-2d; ball_fill sizes the safety ellipsoid as a
#         fraction of half the comm range; update_order: ascending | round-robin
# [train] optimizer: sgd | adam; total_steps counts environment steps
";

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let train_seed_set = raw
            .get("train")
            .and_then(|t| t.as_table())
            .is_some_and(|t| t.contains_key("seed"));
        if !train_seed_set {
            cfg.train.seed = cfg.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Annotated default configuration.
    pub fn schema() -> String {
        format!("{SCHEMA_HEADER}\n{}", RunConfig::default().to_toml())
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&(&self.env, &self.train, self.eval_episodes, self.eval_seed_base))
    }

    /// Stable run identifier derived from the configuration.
    pub fn run_id(&self) -> String {
        self.fingerprint()[..12].to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Eval,
}

/// One line of a metrics log: one finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub phase: Phase,
    pub variant: Variant,
    pub episode: usize,
    pub seed: u64,
    /// Percentage of steps with a target-to-target path.
    pub coverage: f64,
    pub activations: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_clock_s: Option<f64>,
}

impl MetricsRecord {
    fn from_curve(run_id: &str, variant: Variant, c: &CurveRecord, wall: Option<f64>) -> Self {
        Self {
            run_id: run_id.to_string(),
            phase: Phase::Train,
            variant,
            episode: c.episode,
            seed: c.seed,
            coverage: c.coverage,
            activations: c.activations,
            episode_return: c.episode_return,
            epsilon: Some(c.epsilon),
            wall_clock_s: wall,
        }
    }

    fn from_eval(run_id: &str, variant: Variant, e: &EpisodeMetrics, wall: Option<f64>) -> Self {
        Self {
            run_id: run_id.to_string(),
            phase: Phase::Eval,
            variant,
            episode: e.episode,
            seed: e.seed,
            coverage: e.coverage,
            activations: e.activations,
            episode_return: e.episode_return,
            epsilon: None,
            wall_clock_s: wall,
        }
    }
}

/// Append-only JSON-lines writer.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path,
        })
    }

    pub fn write(&mut self, rec: &MetricsRecord) -> Result<()> {
        let line = serde_json::to_string(rec).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| serde_json::from_str(l).map_err(|e| Error::Parse(format!("{} line {}: {e}", path.display(), k + 1))))
        .collect()
}

/// Table of mean ± standard deviation per labelled evaluation.
pub fn summary_table(rows: &[(String, &EvalReport)]) -> String {
    let fmt = |m: &MeanStd| format!("{:.2} ± {:.2}", m.mean, m.std);
    let mut lines = vec![[
        "Variant".to_string(),
        "Episodes".to_string(),
        "Avg Coverage (%)".to_string(),
        "Avg Safety Interventions".to_string(),
        "Mean Return".to_string(),
    ]];
    for (label, r) in rows {
        lines.push([
            label.clone(),
            r.episodes.len().to_string(),
            fmt(&r.coverage),
            fmt(&r.activations),
            fmt(&r.episode_return),
        ]);
    }
    let widths: Vec<usize> = (0..5)
        .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (k, l) in lines.iter().enumerate() {
        let cells: Vec<String> = l
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
            .collect();
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
        if k == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
        }
    }
    out
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_METRICS_FILE: &str = "train_metrics.jsonl";
pub const EVAL_METRICS_FILE: &str = "eval_metrics.jsonl";
pub const TRAJECTORY_FILE: &str = "eval_trajectories.jsonl";
pub const SUMMARY_FILE: &str = "summary.md";

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub output: TrainOutput,
}

/// Trains, streaming one metrics record per episode, then writes the checkpoint.
pub fn run_train(cfg: &RunConfig) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    let metrics = dir.join(TRAIN_METRICS_FILE);
    let mut writer = MetricsWriter::create(&metrics)?;
    let run_id = cfg.run_id();
    let variant = cfg.env.variant;
    let start = Instant::now();
    let wall = |s: &Instant| cfg.record_wall_clock.then(|| s.elapsed().as_secs_f64());
    let output = train_with(&cfg.env, &cfg.train, |c| {
        writer.write(&MetricsRecord::from_curve(&run_id, variant, c, wall(&start)))
    })?;
    writer.finish()?;
    let checkpoint = dir.join(CHECKPOINT_FILE);
    Checkpoint::new(&output.params, &cfg.env, &cfg.train).save(&checkpoint)?;
    Ok(TrainArtifacts {
        checkpoint,
        metrics,
        output,
    })
}

#[derive(Debug, Clone)]
pub struct EvalArtifacts {
    pub metrics: PathBuf,
    pub trajectories: PathBuf,
    pub summary: PathBuf,
    pub report: EvalReport,
}

/// Greedy evaluation of a checkpoint with the filter enforced. Writes one
/// metrics record and one trajectory segment per episode plus a summary table.
pub fn run_eval(
    checkpoint_path: impl AsRef<Path>,
    episodes: usize,
    seed_base: u64,
    output_dir: impl AsRef<Path>,
    record_wall_clock: bool,
) -> Result<EvalArtifacts> {
    let ck = Checkpoint::load(checkpoint_path)?;
    let params = ck.params()?;
    check_dims(&params, &ck.env_config)?;
    let dir = output_dir.as_ref();
    ensure_dir(dir)?;
    let run_id = ck.config_fingerprint[..12].to_string();
    let variant = ck.env_config.variant;

    let traj_path = dir.join(TRAJECTORY_FILE);
    let traj_file = File::create(&traj_path).map_err(|e| Error::io(&traj_path, e))?;
    let mut traj = TrajectoryWriter::new(BufWriter::new(traj_file));
    let mut eval_cfg = ck.env_config.clone();
    eval_cfg.force_filter = true;
    let mut current = usize::MAX;
    let report = evaluate_policy_with(
        &mut GreedyPolicy::new(&params),
        &eval_cfg,
        episodes,
        seed_base,
        |k, env, actions, out| {
            if k != current {
                current = k;
                let mut header = TrajectoryHeader::new(k, env.seed(), env.config());
                header.policy = Some(ck.config_fingerprint.clone());
                traj.begin_episode(&header).map_err(|e| Error::io(&traj_path, e))?;
            }
            traj.write_step(&env.record(actions, out)).map_err(|e| Error::io(&traj_path, e))
        },
    )?;
    traj.finish().map_err(|e| Error::io(&traj_path, e))?;

    let metrics = dir.join(EVAL_METRICS_FILE);
    let mut writer = MetricsWriter::create(&metrics)?;
    let start = Instant::now();
    for e in &report.episodes {
        let wall = record_wall_clock.then(|| start.elapsed().as_secs_f64());
        writer.write(&MetricsRecord::from_eval(&run_id, variant, e, wall))?;
    }
    writer.finish()?;

    let summary = dir.join(SUMMARY_FILE);
    let table = summary_table(&[(variant.to_string(), &report)]);
    std::fs::write(&summary, table).map_err(|e| Error::io(&summary, e))?;
    Ok(EvalArtifacts {
        metrics,
        trajectories: traj_path,
        summary,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Geometry,
    Filter,
    Env,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometry" => Ok(Suite::Geometry),
            "filter" => Ok(Suite::Filter),
            "env" => Ok(Suite::Env),
            "all" => Ok(Suite::All),
            other => Err(Error::Config(format!(
                "unknown suite {other:?} (expected geometry|filter|env|all)"
            ))),
        }
    }
}

pub const GEOMETRY_TRIALS: usize = 10_000;
pub const FILTER_STEPS: usize = 1000;

pub fn run_suites(suite: Suite, seed: u64) -> Result<Vec<SuiteReport>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Geometry | Suite::All) {
        out.push(geometry_suite(seed, GEOMETRY_TRIALS)?);
    }
    if matches!(suite, Suite::Filter | Suite::All) {
        out.push(filter_suite(seed, FILTER_STEPS)?);
    }
    if matches!(suite, Suite::Env | Suite::All) {
        out.push(verify_env(seed)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
