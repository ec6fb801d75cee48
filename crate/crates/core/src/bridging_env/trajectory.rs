//! JSON-lines trajectory log. Each episode is a header line followed by one
//! record per step; a file may hold several episodes.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnvConfig, RewardBreakdown};
use crate::error::{Error, Result};
use crate::fingerprint::fingerprint;
use crate::safety_filter::SafetyActivation;

pub const TRAJECTORY_FORMAT: &str = "bridgesafe-trajectory";
pub const TRAJECTORY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub format: String,
    pub version: u32,
    pub episode: usize,
    pub seed: u64,
    pub config: EnvConfig,
    pub config_fingerprint: String,
    /// Checkpoint the actions came from, if any.
    #[serde(default)]
    pub policy: Option<String>,
}

impl TrajectoryHeader {
    pub fn new(episode: usize, seed: u64, config: &EnvConfig) -> Self {
        Self {
            format: TRAJECTORY_FORMAT.to_string(),
            version: TRAJECTORY_VERSION,
            episode,
            seed,
            config: config.clone(),
            config_fingerprint: fingerprint(config),
            policy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// Action indices in agent order.
    pub actions: Vec<usize>,
    /// Agent positions after the step.
    pub positions: Vec<[f64; 2]>,
    pub setpoints: Vec<Vec<f64>>,
    pub targets: [[f64; 2]; 2],
    pub activations: Vec<SafetyActivation>,
    pub reward: RewardBreakdown,
    pub safety_penalty: f64,
    pub joint_reward: f64,
    pub truncated: bool,
    pub edges: Vec<[String; 2]>,
}

/// One episode of a trajectory log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySegment {
    pub header: TrajectoryHeader,
    pub steps: Vec<StepRecord>,
}

pub struct TrajectoryWriter<W: Write> {
    out: W,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn begin_episode(&mut self, header: &TrajectoryHeader) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, header)?;
        self.out.write_all(b"\n")
    }

    pub fn write_step(&mut self, record: &StepRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

const HEADER_PREFIX: &str = "{\"format\":";

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Vec<TrajectorySegment>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let at = |line: usize, e: serde_json::Error| Error::Parse(format!("{} line {line}: {e}", path.display()));
    let mut segments: Vec<TrajectorySegment> = Vec::new();
    for (k, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with(HEADER_PREFIX) {
            let header: TrajectoryHeader = serde_json::from_str(&line).map_err(|e| at(k + 1, e))?;
            if header.format != TRAJECTORY_FORMAT {
                return Err(Error::Parse(format!("{} line {}: not a trajectory header", path.display(), k + 1)));
            }
            if header.version != TRAJECTORY_VERSION {
                return Err(Error::VersionMismatch {
                    expected: TRAJECTORY_VERSION,
                    found: header.version,
                });
            }
            segments.push(TrajectorySegment {
                header,
                steps: Vec::new(),
            });
        } else {
            let seg = segments
                .last_mut()
                .ok_or_else(|| Error::Parse(format!("{}: step record before any header", path.display())))?;
            seg.steps.push(serde_json::from_str(&line).map_err(|e| at(k + 1, e))?);
        }
    }
    if segments.is_empty() {
        return Err(Error::Parse(format!("{}: empty trajectory log", path.display())));
    }
    Ok(segments)
}
