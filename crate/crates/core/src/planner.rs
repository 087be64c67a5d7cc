//! Receding-horizon trajectory optimization for one robot.
//!
//! The double integrator is condensed so every predicted position and
//! velocity is affine in the stacked input sequence. Each SQP iteration
//! linearizes the sphere-separation constraints against the assumed
//! teammate trajectories into halfspaces, adds the input box (hard) and the
//! velocity box (soft), and solves the resulting convex QP. Iterates are
//! accepted only when they do not increase the exact-penalty merit
//! `cost + ρ·violation`.
//!
//! A teammate whose plan was just received gets a fixed halfspace instead:
//! it separates this robot's previous plan from the teammate's at their
//! midpoint. The teammate builds the mirror image from the same two plans,
//! so two robots exchanging plans never both claim the same free space.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qp::{LinearRow, QpSettings, QpSolver};
use crate::world::{step_dynamics, ControlInput, RobotState, Vec3, WorldConfig};

/// Predicted positions for steps `start_step + 1 ..= start_step + N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start_step: u64,
    pub positions: Vec<Vec3>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    /// Number of predicted steps N.
    pub horizon: usize,
    /// Weight q on squared goal distance at steps 1..N-1.
    pub stage_goal_weight: f64,
    /// Weight on squared input magnitude.
    pub input_weight: f64,
    /// Weight q_N on squared goal distance at step N.
    pub terminal_weight: f64,
    pub sqp_max_iters: usize,
    pub convergence_tol: f64,
    /// Exact-penalty weight ρ on collision and velocity-box violation.
    pub slack_penalty: f64,
    /// Clearance planned on top of the sum of radii. The default equals
    /// `convergence_tol`, so a plan accepted within tolerance still clears
    /// the contact distance.
    pub safety_margin: f64,
    /// Teammate samples farther than this beyond the required clearance
    /// are left out of the subproblem.
    pub activation_distance: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            stage_goal_weight: 1.0,
            input_weight: 0.1,
            terminal_weight: 10.0,
            sqp_max_iters: 8,
            convergence_tol: 1e-3,
            slack_penalty: 1e3,
            safety_margin: 1e-3,
            activation_distance: 1.0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::Config(format!("planner.horizon must be >= 2, got {}", self.horizon)));
        }
        for (name, v) in [
            ("planner.stage_goal_weight", self.stage_goal_weight),
            ("planner.input_weight", self.input_weight),
            ("planner.terminal_weight", self.terminal_weight),
            ("planner.safety_margin", self.safety_margin),
            ("planner.activation_distance", self.activation_distance),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [
            ("planner.slack_penalty", self.slack_penalty),
            ("planner.convergence_tol", self.convergence_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if self.sqp_max_iters == 0 {
            return Err(Error::Config("planner.sqp_max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub trajectory: Trajectory,
    /// Full optimized input sequence; element 0 is executed.
    pub inputs: Vec<ControlInput>,
    pub first_input: ControlInput,
    pub converged: bool,
    /// Largest shortfall below the sum of radii against any assumed
    /// teammate sample, meters.
    pub max_constraint_violation: f64,
    pub iterations: usize,
}

/// Outcome of one linearize-and-solve pass.
#[derive(Debug, Clone)]
pub struct SqpIterate {
    pub inputs: Vec<ControlInput>,
    pub merit: f64,
    /// The convex subproblem reached its tolerance.
    pub subproblem_converged: bool,
    /// No iterate-linearized collision sample was close enough to enter the
    /// subproblem before or after the step (split rows are fixed), so the
    /// subproblem solution is exact.
    pub exact: bool,
    /// Line search found no non-increasing step; `inputs` is the previous iterate.
    pub stalled: bool,
}

/// Previous plans shared between this robot and the teammates whose plan
/// it has just received.
#[derive(Debug, Clone, Copy)]
pub struct SharedPlans<'a> {
    /// This robot's previous plan, aligned to the current step.
    pub own: &'a Trajectory,
    /// Per assumed trajectory (same order): it is a freshly received plan.
    pub received: &'a [bool],
}

/// Fixed halfspace `normal · (p_k − q_k) ≥ separation` against a received plan.
#[derive(Debug, Clone, Copy)]
struct SplitRow {
    other: usize,
    step: usize,
    normal: Vec3,
    separation: f64,
}

/// One robot's assumed environment for a single planning call.
#[derive(Debug, Clone)]
pub struct PlanningProblem<'a> {
    pub me: &'a RobotState,
    pub others: &'a [Trajectory],
    /// Per assumed trajectory: constrained by split rows instead of the
    /// iterate-linearized clearance.
    received: Vec<bool>,
    split: Vec<SplitRow>,
    /// Free response `p0 + (k+1)·dt·v0`, k = 0..N-1.
    free_positions: Vec<Vec3>,
    /// Linear cost term over stacked inputs, axis-major.
    linear: Vec<f64>,
    /// Required clearance used by the subproblem (radii plus margin).
    clearance: f64,
    /// Hard-limit clearance (sum of radii) used for violation reporting.
    contact: f64,
}

#[derive(Debug, Clone)]
pub struct Planner {
    config: PlannerConfig,
    dt: f64,
    v_max: f64,
    u_max: f64,
    /// Position response, row-major `N x N`: coefficient of `u_m` in the
    /// displacement at step `k + 1`.
    response: Vec<f64>,
    qp: QpSolver,
}

impl Planner {
    pub fn new(config: PlannerConfig, world: &WorldConfig) -> Result<Self> {
        config.validate()?;
        world.validate()?;
        let n = config.horizon;
        let dt = world.dt;
        let mut response = vec![0.0; n * n];
        for k in 0..n {
            for m in 0..=k {
                response[k * n + m] = dt * dt * ((k - m) as f64 + 0.5);
            }
        }
        // Per-axis Hessian 2(ΓᵀWΓ + r_u I), replicated on the three axes.
        let mut axis = DMatrix::<f64>::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                let mut s = 0.0;
                for k in a.max(b)..n {
                    s += weight_at(&config, k) * response[k * n + a] * response[k * n + b];
                }
                axis[(a, b)] = 2.0 * s;
            }
            axis[(a, a)] += 2.0 * config.input_weight;
        }
        let mut hessian = DMatrix::<f64>::zeros(3 * n, 3 * n);
        for c in 0..3 {
            hessian.view_mut((c * n, c * n), (n, n)).copy_from(&axis);
        }
        let qp = QpSolver::new(hessian, QpSettings::default())
            .ok_or_else(|| Error::Config("planner cost is not strictly convex; raise input_weight".into()))?;
        Ok(Self {
            config,
            dt,
            v_max: world.v_max,
            u_max: world.u_max,
            response,
            qp,
        })
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn problem<'a>(&self, me: &'a RobotState, others: &'a [Trajectory]) -> PlanningProblem<'a> {
        self.shared_problem(me, others, None)
    }

    /// Like [`Planner::problem`], with split halfspaces against received plans.
    ///
    /// With `d` the distance between the two previous plans at a step, the
    /// row demands `n · (p − q) ≥ max(c, (c + d) / 2)` along the unit
    /// normal `n` from the teammate's plan to ours. Two robots holding each
    /// other's plans impose mirrored rows, and the rows sum to a separation
    /// of at least the clearance `c`, whatever either robot decides.
    pub fn shared_problem<'a>(
        &self,
        me: &'a RobotState,
        others: &'a [Trajectory],
        shared: Option<SharedPlans<'_>>,
    ) -> PlanningProblem<'a> {
        let n = self.config.horizon;
        let free_positions: Vec<Vec3> = (0..n).map(|k| me.position + ((k + 1) as f64 * self.dt) * me.velocity).collect();
        let mut linear = vec![0.0; 3 * n];
        for c in 0..3 {
            for m in 0..n {
                let mut s = 0.0;
                for k in m..n {
                    s += weight_at(&self.config, k) * self.response[k * n + m] * (free_positions[k][c] - me.goal[c]);
                }
                linear[c * n + m] = 2.0 * s;
            }
        }
        let contact = 2.0 * me.radius;
        let clearance = contact + self.config.safety_margin;
        let mut received = vec![false; others.len()];
        let mut split = Vec::new();
        if let Some(shared) = shared {
            for (idx, other) in others.iter().enumerate() {
                if !shared.received.get(idx).copied().unwrap_or(false) || shared.own.len() != n {
                    continue;
                }
                received[idx] = true;
                for step in 0..n {
                    let ours = shared.own.positions[step];
                    let theirs = other.positions[step];
                    let d = (ours - theirs).norm();
                    split.push(SplitRow {
                        other: idx,
                        step,
                        normal: separating_direction(ours, theirs, me),
                        separation: clearance.max(0.5 * (clearance + d)),
                    });
                }
            }
        }
        PlanningProblem {
            me,
            others,
            received,
            split,
            free_positions,
            linear,
            clearance,
            contact,
        }
    }

    /// Positions under the affine (unclamped) model.
    fn model_positions(&self, problem: &PlanningProblem<'_>, inputs: &[ControlInput]) -> Vec<Vec3> {
        let n = self.config.horizon;
        (0..n)
            .map(|k| {
                let mut p = problem.free_positions[k];
                for (m, u) in inputs.iter().enumerate().take(k + 1) {
                    p += self.response[k * n + m] * u.acceleration;
                }
                p
            })
            .collect()
    }

    /// Tracking and effort cost of an input sequence.
    pub fn cost(&self, problem: &PlanningProblem<'_>, inputs: &[ControlInput]) -> f64 {
        let positions = self.model_positions(problem, inputs);
        let tracking: f64 = positions
            .iter()
            .enumerate()
            .map(|(k, p)| weight_at(&self.config, k) * (p - problem.me.goal).norm_squared())
            .sum();
        let effort: f64 = inputs.iter().map(|u| u.acceleration.norm_squared()).sum();
        tracking + self.config.input_weight * effort
    }

    /// `cost + ρ·(collision shortfall + velocity-box excess)`.
    pub fn merit(&self, problem: &PlanningProblem<'_>, inputs: &[ControlInput]) -> f64 {
        let positions = self.model_positions(problem, inputs);
        let mut violation = 0.0;
        for (other, _) in problem.others.iter().zip(&problem.received).filter(|(_, r)| !**r) {
            for (p, q) in positions.iter().zip(&other.positions) {
                violation += (problem.clearance - (p - q).norm()).max(0.0);
            }
        }
        for row in &problem.split {
            let gap = row.normal.dot(&(positions[row.step] - problem.others[row.other].positions[row.step]));
            violation += (row.separation - gap).max(0.0);
        }
        let mut v = problem.me.velocity;
        for u in inputs {
            v += self.dt * u.acceleration;
            violation += v.iter().map(|c| (c.abs() - self.v_max).max(0.0)).sum::<f64>();
        }
        self.cost(problem, inputs) + self.config.slack_penalty * violation
    }

    fn to_stacked(&self, inputs: &[ControlInput]) -> Vec<f64> {
        let n = self.config.horizon;
        let mut x = vec![0.0; 3 * n];
        for (m, u) in inputs.iter().enumerate() {
            for c in 0..3 {
                x[c * n + m] = u.acceleration[c];
            }
        }
        x
    }

    fn from_stacked(&self, x: &[f64]) -> Vec<ControlInput> {
        let n = self.config.horizon;
        (0..n)
            .map(|m| ControlInput::new(x[m], x[n + m], x[2 * n + m]).clamped(self.u_max))
            .collect()
    }

    /// Input box, velocity box and linearized collision rows around `inputs`.
    /// Returns the rows and whether any collision sample entered.
    fn constraint_rows(&self, problem: &PlanningProblem<'_>, inputs: &[ControlInput]) -> (Vec<LinearRow>, bool) {
        let n = self.config.horizon;
        let dim = 3 * n;
        let rho = self.config.slack_penalty;
        let mut rows = Vec::with_capacity(4 * dim + problem.others.len() * n);
        let collision_row = |k: usize, normal: Vec3, theirs: Vec3, separation: f64| {
            let mut g = vec![0.0; dim];
            for c in 0..3 {
                for m in 0..=k {
                    g[c * n + m] = -normal[c] * self.response[k * n + m];
                }
            }
            let bound = normal.dot(&(problem.free_positions[k] - theirs)) - separation;
            LinearRow::soft(g, bound, rho)
        };
        for idx in 0..dim {
            let mut g = vec![0.0; dim];
            g[idx] = 1.0;
            rows.push(LinearRow::hard(g.clone(), self.u_max));
            g[idx] = -1.0;
            rows.push(LinearRow::hard(g, self.u_max));
        }
        for c in 0..3 {
            let v0 = problem.me.velocity[c];
            for k in 0..n {
                let mut g = vec![0.0; dim];
                g[c * n..c * n + k + 1].iter_mut().for_each(|e| *e = self.dt);
                let neg: Vec<f64> = g.iter().map(|e| -e).collect();
                rows.push(LinearRow::soft(g, self.v_max - v0, rho));
                rows.push(LinearRow::soft(neg, self.v_max + v0, rho));
            }
        }
        let linearization = self.model_positions(problem, inputs);
        let reach = problem.clearance + self.config.activation_distance;
        let mut any_collision = false;
        for (other, _) in problem.others.iter().zip(&problem.received).filter(|(_, r)| !**r) {
            for k in 0..n {
                let theirs = other.positions[k];
                let ours = linearization[k];
                if (ours - theirs).norm() >= reach {
                    continue;
                }
                any_collision = true;
                let normal = separating_direction(ours, theirs, problem.me);
                rows.push(collision_row(k, normal, theirs, problem.clearance));
            }
        }
        for row in &problem.split {
            let theirs = problem.others[row.other].positions[row.step];
            rows.push(collision_row(row.step, row.normal, theirs, row.separation));
        }
        (rows, any_collision)
    }

    fn near_any(&self, problem: &PlanningProblem<'_>, inputs: &[ControlInput]) -> bool {
        let reach = problem.clearance + self.config.activation_distance;
        let positions = self.model_positions(problem, inputs);
        problem
            .others
            .iter()
            .zip(&problem.received)
            .filter(|(_, r)| !**r)
            .any(|(o, _)| positions.iter().zip(&o.positions).any(|(p, q)| (p - q).norm() < reach))
    }

    /// One linearize-and-solve pass with a non-increasing merit line search.
    pub fn solve_sqp_iteration(&self, problem: &PlanningProblem<'_>, current: &[ControlInput]) -> SqpIterate {
        let current_merit = self.merit(problem, current);
        let (rows, any_collision) = self.constraint_rows(problem, current);
        let solution = self.qp.solve(&problem.linear, &rows);
        if solution.x.iter().any(|v| !v.is_finite()) {
            return SqpIterate {
                inputs: current.to_vec(),
                merit: current_merit,
                subproblem_converged: false,
                exact: false,
                stalled: true,
            };
        }
        let target = self.from_stacked(&solution.x);
        let start = self.to_stacked(current);
        let mut alpha = 1.0;
        for _ in 0..12 {
            let trial: Vec<f64> = start
                .iter()
                .zip(&solution.x)
                .map(|(a, b)| a + alpha * (b - a))
                .collect();
            let trial = if alpha == 1.0 { target.clone() } else { self.from_stacked(&trial) };
            let merit = self.merit(problem, &trial);
            if merit <= current_merit + 1e-12 * current_merit.abs().max(1.0) {
                let exact = !any_collision && alpha == 1.0 && !self.near_any(problem, &trial);
                return SqpIterate {
                    inputs: trial,
                    merit,
                    subproblem_converged: solution.converged,
                    exact,
                    stalled: false,
                };
            }
            alpha *= 0.5;
        }
        SqpIterate {
            inputs: current.to_vec(),
            merit: current_merit,
            subproblem_converged: solution.converged,
            exact: false,
            stalled: true,
        }
    }

    /// Optimize the input sequence for `me` against the assumed teammate
    /// trajectories (each aligned to step `now`).
    pub fn plan(
        &self,
        me: &RobotState,
        others: &[Trajectory],
        warm_start: Option<&[ControlInput]>,
        now: u64,
    ) -> Result<PlanResult> {
        self.plan_shared(me, others, None, warm_start, now)
    }

    /// [`Planner::plan`] with split halfspaces against the received plans
    /// marked in `shared`.
    pub fn plan_shared(
        &self,
        me: &RobotState,
        others: &[Trajectory],
        shared: Option<SharedPlans<'_>>,
        warm_start: Option<&[ControlInput]>,
        now: u64,
    ) -> Result<PlanResult> {
        let n = self.config.horizon;
        if !me.is_finite() {
            return Err(Error::Dynamics("planning from a non-finite state".into()));
        }
        for other in others {
            if other.len() != n {
                return Err(Error::shape("assumed teammate trajectory", n, other.len()));
            }
        }
        if let Some(s) = shared {
            if s.received.len() != others.len() {
                return Err(Error::shape("received-plan flags", others.len(), s.received.len()));
            }
            if s.own.len() != n {
                return Err(Error::shape("own previous plan", n, s.own.len()));
            }
        }
        let problem = self.shared_problem(me, others, shared);
        let mut inputs: Vec<ControlInput> = match warm_start {
            Some(w) if w.len() == n && w.iter().all(|u| u.acceleration.iter().all(|a| a.is_finite())) => {
                w.iter().map(|u| u.clamped(self.u_max)).collect()
            }
            _ => vec![ControlInput::zero(); n],
        };
        let mut merit = self.merit(&problem, &inputs);
        let mut converged = false;
        let mut iterations = 0;
        for _ in 0..self.config.sqp_max_iters {
            let step = self.solve_sqp_iteration(&problem, &inputs);
            iterations += 1;
            let change = (merit - step.merit).abs();
            inputs = step.inputs;
            merit = step.merit;
            if step.exact {
                converged = step.subproblem_converged;
                break;
            }
            if step.stalled {
                converged = step.subproblem_converged;
                break;
            }
            if change <= self.config.convergence_tol {
                converged = step.subproblem_converged;
                break;
            }
        }
        let mut trajectory = rollout(me, &inputs, self.dt, self.v_max, self.u_max)?;
        trajectory.start_step = now;
        let max_constraint_violation = others
            .iter()
            .flat_map(|o| trajectory.positions.iter().zip(&o.positions))
            .map(|(p, q)| (problem.contact - (p - q).norm()).max(0.0))
            .fold(0.0, f64::max);
        converged &= max_constraint_violation <= self.config.convergence_tol;
        Ok(PlanResult {
            first_input: inputs[0],
            trajectory,
            inputs,
            converged,
            max_constraint_violation,
            iterations,
        })
    }
}

#[inline]
fn weight_at(config: &PlannerConfig, k: usize) -> f64 {
    if k + 1 == config.horizon {
        config.terminal_weight
    } else {
        config.stage_goal_weight
    }
}

/// Unit vector pushing `ours` away from `theirs`, with deterministic
/// fallbacks when the two coincide.
fn separating_direction(ours: Vec3, theirs: Vec3, me: &RobotState) -> Vec3 {
    let d = ours - theirs;
    if d.norm() > 1e-9 {
        return d / d.norm();
    }
    let d = me.position - theirs;
    if d.norm() > 1e-9 {
        return d / d.norm();
    }
    let to_goal = me.goal - me.position;
    let side = Vec3::new(-to_goal.y, to_goal.x, 0.0);
    if side.norm() > 1e-9 {
        side / side.norm()
    } else {
        Vec3::y()
    }
}

/// Planning with a throwaway [`Planner`].
pub fn plan(
    me: &RobotState,
    others: &[Trajectory],
    config: &PlannerConfig,
    world: &WorldConfig,
    warm_start: Option<&[ControlInput]>,
    now: u64,
) -> Result<PlanResult> {
    Planner::new(config.clone(), world)?.plan(me, others, warm_start, now)
}

/// Integrate `inputs` with the world dynamics. `start_step` is left at 0.
pub fn rollout(initial: &RobotState, inputs: &[ControlInput], dt: f64, v_max: f64, u_max: f64) -> Result<Trajectory> {
    let mut state = *initial;
    let mut positions = Vec::with_capacity(inputs.len());
    for u in inputs {
        state = step_dynamics(&state, u, dt, v_max, u_max)?;
        positions.push(state.position);
    }
    Ok(Trajectory {
        start_step: 0,
        positions,
    })
}

/// Receding-horizon warm start: drop the executed input and repeat the last.
pub fn shift_inputs(inputs: &[ControlInput]) -> Vec<ControlInput> {
    if inputs.is_empty() {
        return Vec::new();
    }
    let mut shifted: Vec<ControlInput> = inputs[1..].to_vec();
    shifted.push(inputs[inputs.len() - 1]);
    shifted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prediction::predict_constant_velocity;

    fn world() -> WorldConfig {
        WorldConfig::default()
    }

    fn at(p: [f64; 3], goal: [f64; 3]) -> RobotState {
        RobotState::at_rest(Vec3::from(p), Vec3::from(goal), 0.3)
    }

    #[test]
    fn rollout_coasts() {
        let mut r = at([0.0; 3], [0.0; 3]);
        r.velocity = Vec3::new(1.0, 0.0, 0.0);
        let t = rollout(&r, &[ControlInput::zero(); 3], 0.1, 2.0, 2.0).unwrap();
        let xs: Vec<f64> = t.positions.iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0.1, 0.2, 0.30000000000000004]);
    }

    #[test]
    fn rollout_single_step_matches_dynamics() {
        let mut r = at([0.2, -0.1, 1.0], [0.0; 3]);
        r.velocity = Vec3::new(0.4, 1.9, -0.3);
        let u = ControlInput::new(1.5, 1.2, -2.0);
        let t = rollout(&r, &[u], 0.1, 2.0, 2.0).unwrap();
        assert_eq!(t.positions[0], step_dynamics(&r, &u, 0.1, 2.0, 2.0).unwrap().position);
    }

    #[test]
    fn at_goal_is_fixed_point() {
        let planner = Planner::new(PlannerConfig::default(), &world()).unwrap();
        let me = at([1.0, 1.0, 0.0], [1.0, 1.0, 0.0]);
        let far = predict_constant_velocity(&at([-3.0, -3.0, 0.0], [0.0; 3]), 0.1, 10, 0);
        let res = planner.plan(&me, &[far], None, 0).unwrap();
        assert!(res.first_input.acceleration.norm() < 1e-12);
        assert!(res.trajectory.positions.iter().all(|p| (p - me.goal).norm() < 1e-9));
        assert!(res.converged);
    }

    #[test]
    fn makes_progress_toward_goal() {
        let planner = Planner::new(PlannerConfig::default(), &world()).unwrap();
        let me = at([-2.0, 0.0, 0.0], [2.0, 0.0, 0.0]);
        let res = planner.plan(&me, &[], None, 0).unwrap();
        let last = res.trajectory.positions.last().unwrap();
        assert!((last - me.goal).norm() < (me.position - me.goal).norm());
        assert!(res.inputs.iter().all(|u| u.acceleration.iter().all(|a| a.abs() <= 2.0)));
        assert!(res.converged);
    }

    #[test]
    fn first_input_replays_to_first_position() {
        let planner = Planner::new(PlannerConfig::default(), &world()).unwrap();
        let mut me = at([-2.0, 0.5, 0.0], [2.0, -0.5, 0.1]);
        me.velocity = Vec3::new(1.0, 0.2, 0.0);
        let other = predict_constant_velocity(&at([0.0, 0.4, 0.0], [0.0; 3]), 0.1, 10, 0);
        let res = planner.plan(&me, &[other], None, 0).unwrap();
        let next = step_dynamics(&me, &res.first_input, 0.1, 2.0, 2.0).unwrap();
        assert_eq!(next.position, res.trajectory.positions[0]);
        assert_eq!(res.first_input, res.inputs[0]);
    }

    #[test]
    fn no_collision_rows_gives_unconstrained_subproblem() {
        let planner = Planner::new(PlannerConfig::default(), &world()).unwrap();
        let me = at([0.0; 3], [0.1, -0.05, 0.02]);
        let problem = planner.problem(&me, &[]);
        let it = planner.solve_sqp_iteration(&problem, &vec![ControlInput::zero(); 10]);
        let free = planner.qp.unconstrained(&problem.linear);
        let ours = planner.to_stacked(&it.inputs);
        for (a, b) in ours.iter().zip(&free) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(it.exact);
    }

    #[test]
    fn blocked_path_produces_lateral_input() {
        let planner = Planner::new(PlannerConfig::default(), &world()).unwrap();
        let mut me = at([0.0; 3], [4.0, 0.0, 0.0]);
        me.velocity = Vec3::new(1.5, 0.0, 0.0);
        // A stationary teammate slightly left of the path, 1 m ahead.
        let blocker = predict_constant_velocity(&at([1.0, 0.05, 0.0], [0.0; 3]), 0.1, 10, 0);
        let problem = planner.problem(&me, std::slice::from_ref(&blocker));
        let straight = planner.solve_sqp_iteration(&problem, &vec![ControlInput::zero(); 10]);
        let it = planner.solve_sqp_iteration(&problem, &straight.inputs);
        // Perturbation oracle: pushing the blocker to the other side flips the sign.
        let mirrored = predict_constant_velocity(&at([1.0, -0.05, 0.0], [0.0; 3]), 0.1, 10, 0);
        let problem_m = planner.problem(&me, std::slice::from_ref(&mirrored));
        let straight_m = planner.solve_sqp_iteration(&problem_m, &vec![ControlInput::zero(); 10]);
        let it_m = planner.solve_sqp_iteration(&problem_m, &straight_m.inputs);
        let lateral = it.inputs[0].acceleration.y;
        let lateral_m = it_m.inputs[0].acceleration.y;
        assert!(lateral < -1e-3, "lateral = {lateral}");
        assert!(lateral_m > 1e-3, "mirrored lateral = {lateral_m}");
        assert!((lateral + lateral_m).abs() < 1e-9);
    }

    #[test]
    fn warm_start_at_optimum_converges_immediately() {
        let planner = Planner::new(PlannerConfig::default(), &world()).unwrap();
        let mut me = at([0.0; 3], [3.0, 0.0, 0.0]);
        me.velocity = Vec3::new(1.0, 0.0, 0.0);
        let other = predict_constant_velocity(&at([1.2, 0.2, 0.0], [0.0; 3]), 0.1, 10, 0);
        let first = planner.plan(&me, std::slice::from_ref(&other), None, 0).unwrap();
        let problem = planner.problem(&me, std::slice::from_ref(&other));
        let before = planner.merit(&problem, &first.inputs);
        let again = planner.solve_sqp_iteration(&problem, &first.inputs);
        assert!((before - again.merit).abs() < planner.config().convergence_tol);
    }

    #[test]
    fn merit_never_increases() {
        let planner = Planner::new(PlannerConfig::default(), &world()).unwrap();
        let mut me = at([0.0; 3], [4.0, 0.3, 0.0]);
        me.velocity = Vec3::new(2.0, 0.0, 0.0);
        let mut oncoming = at([2.0, 0.1, 0.0], [0.0; 3]);
        oncoming.velocity = Vec3::new(-2.0, 0.0, 0.0);
        let others = vec![predict_constant_velocity(&oncoming, 0.1, 10, 0)];
        let problem = planner.problem(&me, &others);
        let mut inputs = vec![ControlInput::zero(); 10];
        let mut merit = planner.merit(&problem, &inputs);
        for _ in 0..10 {
            let it = planner.solve_sqp_iteration(&problem, &inputs);
            assert!(it.merit <= merit + 1e-9 * merit.abs().max(1.0));
            merit = it.merit;
            inputs = it.inputs;
        }
    }

    #[test]
    fn rejects_misaligned_teammate() {
        let planner = Planner::new(PlannerConfig::default(), &world()).unwrap();
        let me = at([0.0; 3], [1.0, 0.0, 0.0]);
        let short = Trajectory {
            start_step: 0,
            positions: vec![Vec3::zeros(); 3],
        };
        assert!(matches!(planner.plan(&me, &[short], None, 0), Err(Error::Shape { .. })));
    }

    #[test]
    fn exchanged_plans_stay_separated() {
        // Both previous plans are slow constant-velocity approaches that
        // end 1.4 m apart; each robot would like to close the gap.
        let w = world();
        let planner = Planner::new(PlannerConfig::default(), &w).unwrap();
        let mut a = at([-1.2, 0.0, 1.0], [2.0, 0.0, 1.0]);
        let mut b = at([1.2, 0.0, 1.0], [-2.0, 0.0, 1.0]);
        a.velocity = Vec3::new(0.5, 0.0, 0.0);
        b.velocity = Vec3::new(-0.5, 0.0, 0.0);
        let prev_a = predict_constant_velocity(&a, w.dt, 10, 0);
        let prev_b = predict_constant_velocity(&b, w.dt, 10, 0);
        let received = [true];
        let plan_a = planner
            .plan_shared(&a, std::slice::from_ref(&prev_b), Some(SharedPlans { own: &prev_a, received: &received }), None, 0)
            .unwrap();
        let plan_b = planner
            .plan_shared(&b, std::slice::from_ref(&prev_a), Some(SharedPlans { own: &prev_b, received: &received }), None, 0)
            .unwrap();
        let clearance = 2.0 * w.radius + planner.config().safety_margin;
        for (p, q) in plan_a.trajectory.positions.iter().zip(&plan_b.trajectory.positions) {
            assert!((p - q).norm() >= clearance - 1e-6, "{}", (p - q).norm());
        }
        // Without the split, each plans against the other's stale run and
        // they meet.
        let greedy_a = planner.plan(&a, std::slice::from_ref(&prev_b), None, 0).unwrap();
        let greedy_b = planner.plan(&b, std::slice::from_ref(&prev_a), None, 0).unwrap();
        let closest = greedy_a
            .trajectory
            .positions
            .iter()
            .zip(&greedy_b.trajectory.positions)
            .map(|(p, q)| (p - q).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(closest < clearance, "{closest}");
    }

    #[test]
    fn received_flags_must_match_teammates() {
        let w = world();
        let planner = Planner::new(PlannerConfig::default(), &w).unwrap();
        let me = at([0.0, 0.0, 1.0], [1.0, 0.0, 1.0]);
        let own = predict_constant_velocity(&me, w.dt, 10, 0);
        let other = predict_constant_velocity(&at([2.0, 0.0, 1.0], [2.0, 0.0, 1.0]), w.dt, 10, 0);
        let shared = SharedPlans { own: &own, received: &[] };
        assert!(planner.plan_shared(&me, &[other], Some(shared), None, 0).is_err());
    }

    #[test]
    fn shift_repeats_last() {
        let u: Vec<_> = (0..4).map(|k| ControlInput::new(k as f64, 0.0, 0.0)).collect();
        let s = shift_inputs(&u);
        let xs: Vec<f64> = s.iter().map(|c| c.acceleration.x).collect();
        assert_eq!(xs, vec![1.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn config_validation() {
        let mut c = PlannerConfig::default();
        c.horizon = 1;
        assert!(c.validate().is_err());
        let mut c = PlannerConfig::default();
        c.slack_penalty = 0.0;
        assert!(c.validate().is_err());
        let mut c = PlannerConfig::default();
        c.input_weight = 0.0;
        c.stage_goal_weight = 0.0;
        c.terminal_weight = 0.0;
        assert!(Planner::new(c, &world()).is_err());
    }
}
