//! Episode engine: observations, shared reward, scenario spawning, the
//! curriculum and the observe → request → assume → plan → execute loop.

mod curriculum;
mod episode;
mod observation;
mod reward;
mod scenario;

pub use curriculum::{curriculum_schedule, CurriculumConfig, ScenarioDistribution};
pub use episode::{
    run_episode, run_from_world, CommController, Decision, EpisodeConfig, EpisodeResult, StepRecord, Termination, Transition,
};
pub use observation::{build_observation, observation_len, Observation};
pub use reward::{compute_reward, RewardConfig};
pub use scenario::{spawn_scenario, Scenario, ScenarioKind, SpawnConfig};
