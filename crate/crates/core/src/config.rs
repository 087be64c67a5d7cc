//! Run configuration: one TOML document with every experiment setting.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{CurriculumConfig, EpisodeConfig, RewardConfig, Scenario, ScenarioKind, SpawnConfig};
use crate::error::{Error, Result};
use crate::maddpg::MaddpgConfig;
use crate::planner::PlannerConfig;
use crate::world::WorldConfig;

/// The default configuration, as shipped in the binary.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../config/default.toml");

/// Which communication policy to run, as named on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Full,
    None,
    Distance(f64),
    /// Learned actors loaded from a checkpoint file.
    Learned(PathBuf),
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Full => write!(f, "full"),
            PolicySpec::None => write!(f, "none"),
            PolicySpec::Distance(eps) => write!(f, "dist:{eps}"),
            PolicySpec::Learned(path) => write!(f, "learned:{}", path.display()),
        }
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "full" => return Ok(PolicySpec::Full),
            "none" => return Ok(PolicySpec::None),
            _ => {}
        }
        if let Some(eps) = s.strip_prefix("dist:") {
            let eps: f64 = eps
                .parse()
                .map_err(|_| Error::Config(format!("bad distance threshold in policy `{s}`")))?;
            if !(eps.is_finite() && eps > 0.0) {
                return Err(Error::Config(format!("distance threshold must be > 0 in policy `{s}`")));
            }
            return Ok(PolicySpec::Distance(eps));
        }
        if let Some(path) = s.strip_prefix("learned:") {
            if path.is_empty() {
                return Err(Error::Config("policy `learned:` needs a checkpoint path".into()));
            }
            return Ok(PolicySpec::Learned(PathBuf::from(path)));
        }
        Err(Error::Config(format!(
            "unknown policy `{s}` (expected full, none, dist:EPS or learned:CHECKPOINT)"
        )))
    }
}

impl Serialize for PolicySpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PolicySpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub episodes: usize,
    /// Episode length cap, steps.
    pub max_steps: usize,
    /// Write a checkpoint after every this many episodes (0 disables
    /// intermediate checkpoints; the final one is always written).
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            episodes: 3000,
            max_steps: 100,
            checkpoint_every: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub episodes: usize,
    pub policy: PolicySpec,
    pub scenario: ScenarioKind,
    /// Threshold of the distance-based baseline in comparisons, meters.
    pub compare_distance: f64,
    /// Learned checkpoint for comparisons; empty to leave the learned
    /// policy out.
    pub compare_checkpoint: String,
    /// Write per-step trajectory records next to the metrics.
    pub trajectory_log: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            episodes: 50,
            policy: PolicySpec::Full,
            scenario: ScenarioKind::AsymmetricSwapping,
            compare_distance: 4.0,
            compare_checkpoint: String::new(),
            trajectory_log: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed every random stream derives from.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub world: WorldConfig,
    pub planner: PlannerConfig,
    pub reward: RewardConfig,
    pub spawn: SpawnConfig,
    pub maddpg: MaddpgConfig,
    pub curriculum: CurriculumConfig,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for RunConfig {
    /// Desk-scale defaults: replay and batch shrunk from the reference
    /// values, everything else as in the reference setup.
    fn default() -> Self {
        Self {
            seed: 7,
            output_dir: PathBuf::from("runs/default"),
            world: WorldConfig::default(),
            planner: PlannerConfig::default(),
            reward: RewardConfig::default(),
            spawn: SpawnConfig::default(),
            maddpg: MaddpgConfig {
                buffer_capacity: 100_000,
                batch_size: 256,
                ..MaddpgConfig::default()
            },
            curriculum: CurriculumConfig::default(),
            training: TrainingConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.planner.validate()?;
        self.maddpg.validate()?;
        let r = &self.reward;
        if [r.w_goal, r.w_collision, r.w_comm, r.goal_reward, r.collision_penalty]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Config("reward weights and terms must be finite and >= 0".into()));
        }
        if self.spawn.min_separation <= 2.0 * self.world.radius {
            return Err(Error::Config("spawn.min_separation must exceed twice the robot radius".into()));
        }
        let c = &self.curriculum;
        if !(0.0 <= c.phase1_end && c.phase1_end <= c.phase2_end && c.phase2_end <= 1.0) {
            return Err(Error::Config("curriculum needs 0 <= phase1_end <= phase2_end <= 1".into()));
        }
        if self.training.max_steps == 0 {
            return Err(Error::Config("training.max_steps must be positive".into()));
        }
        if !(self.evaluation.compare_distance.is_finite() && self.evaluation.compare_distance > 0.0) {
            return Err(Error::Config("evaluation.compare_distance must be > 0".into()));
        }
        Ok(())
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            world: self.world.clone(),
            planner: self.planner.clone(),
            reward: self.reward,
            max_steps: self.training.max_steps,
        }
    }

    pub fn scenario(&self, kind: ScenarioKind) -> Scenario {
        Scenario {
            kind,
            spawn: self.spawn.clone(),
        }
    }
}
