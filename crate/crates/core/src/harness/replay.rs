use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bridging_env::{read_trajectory, ActionPair, BridgingEnv, StepRecord, TrajectorySegment};
use crate::error::{Error, Result};
use crate::fingerprint::fingerprint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub episodes: usize,
    pub steps: usize,
}

fn first_difference(logged: &StepRecord, replayed: &StepRecord) -> String {
    let a = serde_json::to_value(logged).unwrap_or_default();
    let b = serde_json::to_value(replayed).unwrap_or_default();
    if let (Some(a), Some(b)) = (a.as_object(), b.as_object()) {
        for (key, va) in a {
            if b.get(key) != Some(va) {
                return format!("field `{key}` logged {va} replayed {}", b.get(key).cloned().unwrap_or_default());
            }
        }
    }
    "records differ".to_string()
}

/// Re-simulates one episode from its seed and logged actions, requiring every
/// record to match bit for bit. Returns the number of steps replayed.
pub fn replay_segment(segment: &TrajectorySegment) -> Result<usize> {
    let h = &segment.header;
    if fingerprint(&h.config) != h.config_fingerprint {
        return Err(Error::Parse(format!(
            "episode {}: configuration does not match its fingerprint",
            h.episode
        )));
    }
    let mut env = BridgingEnv::new(h.config.clone())?;
    env.reset(h.seed)?;
    for (k, logged) in segment.steps.iter().enumerate() {
        if logged.t != k {
            return Err(Error::DivergenceAt {
                step: k,
                detail: format!("record carries t = {}", logged.t),
            });
        }
        let actions = logged
            .actions
            .iter()
            .map(|&a| ActionPair::from_index(a))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::DivergenceAt {
                step: k,
                detail: e.to_string(),
            })?;
        let out = env.step(&actions).map_err(|e| Error::DivergenceAt {
            step: k,
            detail: e.to_string(),
        })?;
        let replayed = env.record(&actions, &out);
        if &replayed != logged {
            return Err(Error::DivergenceAt {
                step: k,
                detail: first_difference(logged, &replayed),
            });
        }
    }
    Ok(segment.steps.len())
}

pub fn replay(path: impl AsRef<Path>) -> Result<ReplayReport> {
    let segments = read_trajectory(path)?;
    let mut steps = 0;
    for seg in &segments {
        steps += replay_segment(seg)?;
    }
    Ok(ReplayReport {
        episodes: segments.len(),
        steps,
    })
}
