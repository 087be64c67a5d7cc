use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::observation::{build_observation, Observation};
use super::reward::{compute_reward, RewardConfig};
use super::scenario::{spawn_scenario, Scenario};
use crate::comms::{comm_cost, decide_comm, teammates, CommMatrix, PolicyKind};
use crate::error::Result;
use crate::planner::{shift_inputs, Planner, PlannerConfig, SharedPlans};
use crate::prediction::{align_plan, assemble_assumed_trajectories, PlanCache};
use crate::world::{check_collisions, min_pairwise_distance, step_dynamics, ControlInput, WorldConfig, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub world: WorldConfig,
    pub planner: PlannerConfig,
    pub reward: RewardConfig,
    pub max_steps: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            planner: PlannerConfig::default(),
            reward: RewardConfig::default(),
            max_steps: 100,
        }
    }
}

/// Request matrix for one step, plus the continuous scores behind it when
/// the policy has any.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub matrix: CommMatrix,
    pub scores: Option<Vec<Vec<f64>>>,
}

/// What a controller sees after every executed step.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub observations: &'a [Observation],
    pub decision: &'a Decision,
    pub reward: f64,
    pub next_observations: &'a [Observation],
    /// Last step of the episode (collision or step limit).
    pub done: bool,
    pub collision: bool,
}

/// Source of the per-step request matrix. Training controllers also get
/// every transition.
pub trait CommController {
    fn decide(&mut self, world: &WorldState, observations: &[Observation], rng: &mut dyn RngCore) -> Result<Decision>;

    fn on_transition(&mut self, _transition: &Transition<'_>) -> Result<()> {
        Ok(())
    }
}

impl CommController for PolicyKind {
    fn decide(&mut self, world: &WorldState, observations: &[Observation], _rng: &mut dyn RngCore) -> Result<Decision> {
        Ok(Decision {
            matrix: decide_comm(self, observations, world, None)?,
            scores: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Collision,
    Timeout,
}

/// One robot at one executed step: state after the step and the requests
/// it issued during it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub robot: usize,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub comm_row: Vec<u8>,
    pub at_goal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub steps: usize,
    /// Colliding pairs at the terminal step (0 when the episode timed out).
    pub collisions: usize,
    pub comm_requests: usize,
    pub requests_per_step: Vec<usize>,
    /// First step at which each robot was within its goal, if ever.
    pub time_to_goal: Vec<Option<u64>>,
    pub termination: Termination,
    pub total_reward: f64,
    pub min_separation: f64,
    pub unconverged_plans: usize,
    pub log: Vec<StepRecord>,
}

impl EpisodeResult {
    pub fn collided(&self) -> bool {
        self.termination == Termination::Collision
    }

    /// Mean time-to-goal in seconds over robots that arrived.
    pub fn mean_time_to_goal(&self, dt: f64) -> Option<f64> {
        let arrived: Vec<f64> = self.time_to_goal.iter().flatten().map(|&s| s as f64 * dt).collect();
        if arrived.is_empty() {
            None
        } else {
            Some(arrived.iter().sum::<f64>() / arrived.len() as f64)
        }
    }
}

/// Spawn `scenario` and run it to collision or the step limit.
pub fn run_episode<R: RngCore>(
    controller: &mut dyn CommController,
    scenario: &Scenario,
    cfg: &EpisodeConfig,
    planner: &Planner,
    rng: &mut R,
) -> Result<EpisodeResult> {
    let world = spawn_scenario(scenario, &cfg.world, planner.horizon(), rng)?;
    run_from_world(controller, world, cfg, planner, rng)
}

/// Run an episode from an explicit initial world.
pub fn run_from_world<R: RngCore>(
    controller: &mut dyn CommController,
    mut world: WorldState,
    cfg: &EpisodeConfig,
    planner: &Planner,
    rng: &mut R,
) -> Result<EpisodeResult> {
    let n = world.n();
    let dt = cfg.world.dt;
    let horizon = planner.horizon();
    let mut caches: Vec<PlanCache> = (0..n).map(|i| PlanCache::new(i, n)).collect();
    let mut warm: Vec<Option<Vec<ControlInput>>> = vec![None; n];
    let mut time_to_goal: Vec<Option<u64>> = world.robots.iter().map(|r| r.at_goal().then_some(0)).collect();
    let mut requests_per_step = Vec::with_capacity(cfg.max_steps);
    let mut log = Vec::with_capacity(cfg.max_steps * n);
    let mut total_reward = 0.0;
    let mut min_separation = min_pairwise_distance(&world.robots);
    let mut unconverged_plans = 0;
    let mut observations: Vec<Observation> = (0..n).map(|i| build_observation(&world, i)).collect();

    for t in 0..cfg.max_steps {
        let decision = controller.decide(&world, &observations, rng)?;
        let matrix = &decision.matrix;

        let mut plans = Vec::with_capacity(n);
        for i in 0..n {
            let others = assemble_assumed_trajectories(i, matrix.row(i), &mut caches[i], &world, dt, horizon);
            let own = align_plan(&world.current_plans[i], world.time_step, &world.robots[i], dt, horizon);
            let received: Vec<bool> = teammates(i, n).map(|j| matrix.get(i, j)).collect();
            let shared = SharedPlans {
                own: &own,
                received: &received,
            };
            let result = planner.plan_shared(&world.robots[i], &others, Some(shared), warm[i].as_deref(), world.time_step)?;
            if !result.converged {
                unconverged_plans += 1;
            }
            plans.push(result);
        }

        let mut robots = Vec::with_capacity(n);
        for (robot, plan) in world.robots.iter().zip(&plans) {
            robots.push(step_dynamics(robot, &plan.first_input, dt, cfg.world.v_max, cfg.world.u_max)?);
        }
        for (w, plan) in warm.iter_mut().zip(&plans) {
            *w = Some(shift_inputs(&plan.inputs));
        }
        let next = WorldState {
            time_step: world.time_step + 1,
            robots,
            current_plans: plans.into_iter().map(|p| p.trajectory).collect(),
            prev_comm: matrix.clone(),
        };

        let colliding = check_collisions(&next.robots);
        let reward = compute_reward(&next, matrix, &cfg.reward);
        total_reward += reward;
        let requests = comm_cost(matrix);
        requests_per_step.push(requests);
        min_separation = min_separation.min(min_pairwise_distance(&next.robots));
        for (i, r) in next.robots.iter().enumerate() {
            if time_to_goal[i].is_none() && r.at_goal() {
                time_to_goal[i] = Some(next.time_step);
            }
            log.push(StepRecord {
                step: next.time_step,
                robot: i,
                position: r.position.into(),
                velocity: r.velocity.into(),
                comm_row: matrix.teammate_row(i).into_iter().map(u8::from).collect(),
                at_goal: r.at_goal(),
            });
        }

        let collision = !colliding.is_empty();
        let done = collision || t + 1 == cfg.max_steps;
        let next_observations: Vec<Observation> = (0..n).map(|i| build_observation(&next, i)).collect();
        controller.on_transition(&Transition {
            observations: &observations,
            decision: &decision,
            reward,
            next_observations: &next_observations,
            done,
            collision,
        })?;

        world = next;
        observations = next_observations;
        if collision {
            return Ok(EpisodeResult {
                steps: t + 1,
                collisions: colliding.len(),
                comm_requests: requests_per_step.iter().sum(),
                requests_per_step,
                time_to_goal,
                termination: Termination::Collision,
                total_reward,
                min_separation,
                unconverged_plans,
                log,
            });
        }
    }
    Ok(EpisodeResult {
        steps: cfg.max_steps,
        collisions: 0,
        comm_requests: requests_per_step.iter().sum(),
        requests_per_step,
        time_to_goal,
        termination: Termination::Timeout,
        total_reward,
        min_separation,
        unconverged_plans,
        log,
    })
}
