//! Physical ground truth: robot records, double-integrator dynamics and
//! sphere-overlap collision detection.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::comms::CommMatrix;
use crate::error::{Error, Result};
use crate::planner::Trajectory;

pub type Vec3 = Vector3<f64>;

/// Slack allowed on the input box before `step_dynamics` rejects a command.
const INPUT_BOX_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub goal: Vec3,
    pub radius: f64,
}

impl RobotState {
    pub fn at_rest(position: Vec3, goal: Vec3, radius: f64) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            goal,
            radius,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.goal.iter().all(|v| v.is_finite())
            && self.radius.is_finite()
    }

    pub fn distance_to_goal(&self) -> f64 {
        (self.goal - self.position).norm()
    }

    pub fn at_goal(&self) -> bool {
        self.distance_to_goal() <= self.radius
    }
}

/// Commanded acceleration, m/s².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub acceleration: Vec3,
}

impl ControlInput {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            acceleration: Vec3::new(x, y, z),
        }
    }

    pub fn zero() -> Self {
        Self {
            acceleration: Vec3::zeros(),
        }
    }

    /// Component-wise clamp into `[-u_max, u_max]`.
    pub fn clamped(self, u_max: f64) -> Self {
        Self {
            acceleration: self.acceleration.map(|a| a.clamp(-u_max, u_max)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    /// Number of robots.
    pub n: usize,
    /// Sampling time, seconds.
    pub dt: f64,
    /// Enclosing-sphere radius, meters.
    pub radius: f64,
    pub v_max: f64,
    pub u_max: f64,
    pub arena_half_extents: [f64; 3],
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n: 4,
            dt: 0.1,
            radius: 0.3,
            v_max: 2.0,
            u_max: 2.0,
            arena_half_extents: [4.0, 4.0, 1.5],
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("world.n must be >= 2, got {}", self.n)));
        }
        for (name, value) in [
            ("world.dt", self.dt),
            ("world.radius", self.radius),
            ("world.v_max", self.v_max),
            ("world.u_max", self.u_max),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {value}")));
            }
        }
        if self.arena_half_extents.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::Config("world.arena_half_extents must be positive".into()));
        }
        Ok(())
    }

    pub fn arena_half_extents(&self) -> Vec3 {
        Vec3::from(self.arena_half_extents)
    }
}

/// Advance one robot by one sample of the double integrator.
///
/// Position uses the unclamped velocity over the interval; the resulting
/// velocity is clamped component-wise into `[-v_max, v_max]` afterwards.
pub fn step_dynamics(
    state: &RobotState,
    input: &ControlInput,
    dt: f64,
    v_max: f64,
    u_max: f64,
) -> Result<RobotState> {
    let u = &input.acceleration;
    if !u.iter().all(|a| a.is_finite()) || !state.is_finite() || !dt.is_finite() {
        return Err(Error::Dynamics(format!(
            "non-finite input or state (u = {:?}, dt = {dt})",
            u.as_slice()
        )));
    }
    if u.iter().any(|a| a.abs() > u_max + INPUT_BOX_SLACK) {
        return Err(Error::Dynamics(format!(
            "input {:?} outside box of +/-{u_max}",
            u.as_slice()
        )));
    }
    let mut next = *state;
    for c in 0..3 {
        next.position[c] = state.position[c] + dt * state.velocity[c] + 0.5 * dt * dt * u[c];
        next.velocity[c] = (state.velocity[c] + dt * u[c]).clamp(-v_max, v_max);
    }
    Ok(next)
}

/// Joint state of the team at one simulation step.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub time_step: u64,
    pub robots: Vec<RobotState>,
    /// Plan each robot computed at the previous step (its communicable trajectory).
    pub current_plans: Vec<Trajectory>,
    pub prev_comm: CommMatrix,
}

impl WorldState {
    /// Build a step-0 world. Before any robot has planned, the communicable
    /// plan of each robot is its constant-velocity extrapolation.
    pub fn initial(robots: Vec<RobotState>, dt: f64, horizon: usize) -> Self {
        let current_plans = robots
            .iter()
            .map(|r| crate::prediction::predict_constant_velocity(r, dt, horizon, 0))
            .collect();
        let n = robots.len();
        Self {
            time_step: 0,
            robots,
            current_plans,
            prev_comm: CommMatrix::zeros(n),
        }
    }

    pub fn n(&self) -> usize {
        self.robots.len()
    }

    pub fn positions(&self) -> impl Iterator<Item = &Vec3> {
        self.robots.iter().map(|r| &r.position)
    }
}

/// Every unordered pair `(i, j)`, `i < j`, whose spheres overlap strictly.
/// Touching spheres (distance exactly `r_i + r_j`) are collision-free.
pub fn check_collisions(robots: &[RobotState]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..robots.len() {
        for j in (i + 1)..robots.len() {
            let d = (robots[i].position - robots[j].position).norm();
            if d < robots[i].radius + robots[j].radius {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

pub fn all_at_goal(robots: &[RobotState]) -> bool {
    robots.iter().all(RobotState::at_goal)
}

pub fn min_pairwise_distance(robots: &[RobotState]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..robots.len() {
        for j in (i + 1)..robots.len() {
            best = best.min((robots[i].position - robots[j].position).norm());
        }
    }
    best
}
