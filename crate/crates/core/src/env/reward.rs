use serde::{Deserialize, Serialize};

use crate::comms::{comm_cost, CommMatrix};
use crate::world::{all_at_goal, check_collisions, WorldState};

/// Weights and tuned terms of the shared team reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub w_goal: f64,
    pub w_collision: f64,
    pub w_comm: f64,
    pub goal_reward: f64,
    pub collision_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_goal: 1.0,
            w_collision: 1.0,
            w_comm: 0.1,
            goal_reward: 1.3,
            collision_penalty: 150.0,
        }
    }
}

/// `w_g·R_g + w_coll·R_coll + w_c·(−C(π))`, identical for every robot.
pub fn compute_reward(world: &WorldState, matrix: &CommMatrix, cfg: &RewardConfig) -> f64 {
    let goal_term = if all_at_goal(&world.robots) { cfg.goal_reward } else { 0.0 };
    let collision_term = if check_collisions(&world.robots).is_empty() {
        0.0
    } else {
        -cfg.collision_penalty
    };
    let comm_term = -(comm_cost(matrix) as f64);
    cfg.w_goal * goal_term + cfg.w_collision * collision_term + cfg.w_comm * comm_term
}
