//! Numerical self-checks against independent oracles: finite-difference
//! gradients, a dense quadratic program for the planner, closed-form
//! prediction and a direct reward formula.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use crate::comms::{teammates, CommMatrix, PolicyKind};
use crate::env::{run_from_world, EpisodeConfig, RewardConfig};
use crate::error::Result;
use crate::maddpg::{actor_objective_gradient, AgentNets, Batch, MaddpgConfig, TransitionSample};
use crate::neural::{Activation, ForwardCache, GradientBuffer, MlpParams};
use crate::planner::{rollout, Planner, PlannerConfig, Trajectory};
use crate::prediction::{align_plan, predict_constant_velocity};
use crate::seeding::{stream, Purpose};
use crate::world::{ControlInput, RobotState, Vec3, WorldConfig, WorldState};

/// Relative-error tolerance of single-network gradients.
pub const GRADIENT_TOL: f64 = 1e-4;
/// Relative-error tolerance of the actor-through-critic gradient.
pub const COMPOSITE_GRADIENT_TOL: f64 = 1e-3;
/// Per-coordinate position tolerance of the planner against the dense QP, m.
pub const PLANNER_ORACLE_TOL: f64 = 1e-4;
/// Probes per layer in the gradient checks.
pub const PROBES_PER_LAYER: usize = 100;

/// Central-difference step.
const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so gradients that vanish
/// analytically compare on an absolute scale instead of dividing noise by
/// zero.
const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn below(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            passed: measured < tolerance,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Parameter gradient of `output_gradient · output`, the quantity under test.
pub type BackwardFn = fn(&MlpParams, &ForwardCache, &[f64]) -> Result<GradientBuffer>;

pub fn reference_backward(net: &MlpParams, cache: &ForwardCache, output_gradient: &[f64]) -> Result<GradientBuffer> {
    Ok(net.backward(cache, output_gradient)?.params)
}

/// Negative-control fixture: correct gradients inflated by 0.1 %.
pub fn corrupted_backward(net: &MlpParams, cache: &ForwardCache, output_gradient: &[f64]) -> Result<GradientBuffer> {
    let mut g = reference_backward(net, cache, output_gradient)?;
    g.scale(1.001);
    Ok(g)
}

/// ReLU on/off pattern of every hidden unit, used to reject probes whose
/// finite-difference interval straddles a kink.
fn relu_pattern(net: &MlpParams, cache: &ForwardCache) -> Vec<bool> {
    let hidden = net.layers.len() - 1;
    let relu = net.hidden_activation == Activation::Relu;
    cache.pre_activations()[..hidden]
        .iter()
        .flatten()
        .map(|z| relu && *z > 0.0)
        .collect()
}

fn param_mut(net: &mut MlpParams, layer: usize, index: usize) -> &mut f64 {
    let l = &mut net.layers[layer];
    let weights = l.weights.len();
    if index < weights {
        &mut l.weights[index]
    } else {
        &mut l.biases[index - weights]
    }
}

fn buffer_value(g: &GradientBuffer, layer: usize, index: usize) -> f64 {
    let l = &g.layers[layer];
    if index < l.weights.len() {
        l.weights[index]
    } else {
        l.biases[index - l.weights.len()]
    }
}

/// Largest relative error over `probes` random (input, output weighting,
/// parameter) triples in layer `layer` of `net`.
pub fn layer_gradient_error(
    net: &MlpParams,
    layer: usize,
    probes: usize,
    backward: BackwardFn,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < probes {
        let x: Vec<f64> = (0..net.input_size()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..net.output_size()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let l = &net.layers[layer];
        let index = rng.random_range(0..l.weights.len() + l.biases.len());

        let (_, cache) = net.forward(&x)?;
        let analytic = buffer_value(&backward(net, &cache, &g)?, layer, index);
        let eval = |delta: f64| -> Result<(f64, Vec<bool>)> {
            let mut shifted = net.clone();
            *param_mut(&mut shifted, layer, index) += delta;
            let (y, cache) = shifted.forward(&x)?;
            Ok((y.iter().zip(&g).map(|(a, b)| a * b).sum(), relu_pattern(&shifted, &cache)))
        };
        let (plus, pattern_plus) = eval(FD_STEP)?;
        let (minus, pattern_minus) = eval(-FD_STEP)?;
        if pattern_plus != pattern_minus || pattern_plus != relu_pattern(net, &cache) {
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic, numeric));
        done += 1;
    }
    Ok(worst)
}

/// Gradient checks over every layer of a freshly initialised actor and
/// critic of the default team shape.
pub fn gradient_checks(n: usize, obs_len: usize, backward: BackwardFn, rng: &mut dyn RngCore) -> Result<Vec<CheckOutcome>> {
    let cfg = MaddpgConfig::default();
    let agent = AgentNets::new(n, obs_len, &cfg, rng);
    let mut out = Vec::new();
    for (name, net) in [("actor", &agent.actor), ("critic", &agent.critic)] {
        for layer in 0..net.layers.len() {
            let l = &net.layers[layer];
            let err = layer_gradient_error(net, layer, PROBES_PER_LAYER, backward, rng)?;
            out.push(CheckOutcome::below(
                format!("{name} layer {layer} ({}x{}) gradient", l.inputs, l.outputs),
                err,
                GRADIENT_TOL,
            ));
        }
    }
    Ok(out)
}

/// Mean critic value with agent `i` acting through its actor, evaluated
/// sample by sample; also returns the joint ReLU pattern.
fn composite_objective(agents: &[AgentNets], i: usize, samples: &[TransitionSample]) -> Result<(f64, Vec<bool>)> {
    let mut total = 0.0;
    let mut pattern = Vec::new();
    for s in samples {
        let (a, actor_cache) = agents[i].actor.forward(&s.observations[i])?;
        pattern.extend(relu_pattern(&agents[i].actor, &actor_cache));
        let mut joint: Vec<f64> = s.observations.concat();
        for (j, scores) in s.scores.iter().enumerate() {
            joint.extend(if j == i { &a } else { scores });
        }
        let (q, critic_cache) = agents[i].critic.forward(&joint)?;
        pattern.extend(relu_pattern(&agents[i].critic, &critic_cache));
        total += q[0];
    }
    Ok((total / samples.len() as f64, pattern))
}

/// Largest relative error of the actor-through-critic gradient over
/// `probes` random actor parameters.
pub fn composite_gradient_error(n: usize, obs_len: usize, probes: usize, rng: &mut dyn RngCore) -> Result<f64> {
    let cfg = MaddpgConfig::default();
    let agents: Vec<AgentNets> = (0..n).map(|_| AgentNets::new(n, obs_len, &cfg, rng)).collect();
    let samples: Vec<TransitionSample> = (0..8)
        .map(|_| {
            let vecs = |rng: &mut dyn RngCore, len: usize, lo: f64, hi: f64| -> Vec<Vec<f64>> {
                (0..n).map(|_| (0..len).map(|_| rng.random_range(lo..hi)).collect()).collect()
            };
            let scores = vecs(rng, n - 1, 0.01, 0.99);
            TransitionSample {
                observations: vecs(rng, obs_len, -1.0, 1.0),
                matrix: CommMatrix::zeros(n),
                scores,
                reward: 0.0,
                next_observations: vecs(rng, obs_len, -1.0, 1.0),
                done: false,
                collision: false,
            }
        })
        .collect();
    let batch = Batch::from_samples(&samples)?;
    let i = rng.random_range(0..n);
    let (_, grads) = actor_objective_gradient(&agents, i, &batch)?;
    let (_, base_pattern) = composite_objective(&agents, i, &samples)?;
    let actor = &agents[i].actor;
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < probes {
        let layer = rng.random_range(0..actor.layers.len());
        let l = &actor.layers[layer];
        let index = rng.random_range(0..l.weights.len() + l.biases.len());
        // The buffer holds the gradient of the negated objective.
        let analytic = -buffer_value(&grads, layer, index);
        let eval = |delta: f64| {
            let mut team = agents.clone();
            *param_mut(&mut team[i].actor, layer, index) += delta;
            composite_objective(&team, i, &samples)
        };
        let (plus, pattern_plus) = eval(FD_STEP)?;
        let (minus, pattern_minus) = eval(-FD_STEP)?;
        if pattern_plus != pattern_minus || pattern_plus != base_pattern {
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic, numeric));
        done += 1;
    }
    Ok(worst)
}

/// Positions of the unconstrained finite-horizon problem, solved as one
/// dense equality-constrained QP over stacked states and inputs:
/// minimise `Σ w_k |p_k − g|² + r Σ |u_k|²` subject to the double
/// integrator, via its KKT system.
pub fn dense_qp_positions(me: &RobotState, cfg: &PlannerConfig, dt: f64) -> Vec<Vec3> {
    let n = cfg.horizon;
    // z = [s_1 .. s_N (6 each: p, v), u_0 .. u_{N-1} (3 each)]
    let nz = 9 * n;
    let ne = 6 * n;
    let s = |k: usize| 6 * (k - 1); // state k = 1..N
    let u = |k: usize| 6 * n + 3 * k; // input k = 0..N-1
    let mut kkt = DMatrix::<f64>::zeros(nz + ne, nz + ne);
    let mut rhs = DVector::<f64>::zeros(nz + ne);
    for k in 1..=n {
        let w = if k == n { cfg.terminal_weight } else { cfg.stage_goal_weight };
        for c in 0..3 {
            kkt[(s(k) + c, s(k) + c)] = 2.0 * w;
            rhs[s(k) + c] = 2.0 * w * me.goal[c];
        }
    }
    for k in 0..n {
        for c in 0..3 {
            kkt[(u(k) + c, u(k) + c)] = 2.0 * cfg.input_weight;
        }
    }
    // s_{k+1} − A s_k − B u_k = 0, with s_0 known.
    for k in 0..n {
        for c in 0..3 {
            let rp = nz + 6 * k + c;
            let rv = nz + 6 * k + 3 + c;
            let mut rows = vec![
                (rp, s(k + 1) + c, 1.0),
                (rp, u(k) + c, -0.5 * dt * dt),
                (rv, s(k + 1) + 3 + c, 1.0),
                (rv, u(k) + c, -dt),
            ];
            if k == 0 {
                rhs[rp] = me.position[c] + dt * me.velocity[c];
                rhs[rv] = me.velocity[c];
            } else {
                rows.extend([(rp, s(k) + c, -1.0), (rp, s(k) + 3 + c, -dt), (rv, s(k) + 3 + c, -1.0)]);
            }
            for (r, col, v) in rows {
                kkt[(r, col)] = v;
                kkt[(col, r)] = v;
            }
        }
    }
    let z = kkt.lu().solve(&rhs).expect("KKT system of a strictly convex QP is nonsingular");
    (1..=n).map(|k| Vec3::new(z[s(k)], z[s(k) + 1], z[s(k) + 2])).collect()
}

/// Worst per-coordinate gap between the planner's single-robot plan and
/// the dense QP over `cases` random starts. Speed and input limits are
/// lifted so the plan is the unconstrained optimum.
pub fn planner_oracle_error(cfg: &PlannerConfig, cases: usize, rng: &mut dyn RngCore) -> Result<f64> {
    let world = WorldConfig {
        v_max: 1e3,
        u_max: 1e3,
        ..WorldConfig::default()
    };
    let planner = Planner::new(cfg.clone(), &world)?;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let mut v = || Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(0.5..1.5));
        let position = v();
        let goal = v();
        let velocity = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5));
        let me = RobotState {
            position,
            velocity,
            goal,
            radius: world.radius,
        };
        let plan = planner.plan(&me, &[], None, 0)?;
        let oracle = dense_qp_positions(&me, cfg, world.dt);
        for (p, q) in plan.trajectory.positions.iter().zip(&oracle) {
            worst = worst.max((p - q).amax());
        }
    }
    Ok(worst)
}

/// Closed-loop minimum separation of two robots flying head-on at each
/// other under full communication. `lateral_offset` displaces one start
/// sideways.
pub fn head_on_min_separation(cfg: &EpisodeConfig, lateral_offset: f64) -> Result<f64> {
    let world = WorldConfig { n: 2, ..cfg.world.clone() };
    let episode = EpisodeConfig {
        world: world.clone(),
        ..cfg.clone()
    };
    let planner = Planner::new(cfg.planner.clone(), &world)?;
    let a = Vec3::new(-2.5, lateral_offset, 1.0);
    let b = Vec3::new(2.5, 0.0, 1.0);
    let robots = vec![RobotState::at_rest(a, b, world.radius), RobotState::at_rest(b, a, world.radius)];
    let start = WorldState::initial(robots, world.dt, planner.horizon());
    let mut rng = stream(0, Purpose::SelfCheck, 0);
    let result = run_from_world(&mut PolicyKind::FullComm, start, &episode, &planner, &mut rng)?;
    Ok(result.min_separation)
}

/// Largest position gap between the constant-velocity prediction and a
/// zero-input rollout of the same robot, plus whether aligning a plan at
/// zero shift returned it unchanged, over `cases` random robots.
pub fn prediction_errors(world: &WorldConfig, horizon: usize, cases: usize, rng: &mut dyn RngCore) -> Result<(f64, bool)> {
    let mut worst: f64 = 0.0;
    let mut identity = true;
    for case in 0..cases {
        let p = Vec3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(0.0..1.5));
        let lim = world.v_max;
        let v = Vec3::new(rng.random_range(-lim..lim), rng.random_range(-lim..lim), rng.random_range(-lim..lim));
        let robot = RobotState {
            position: p,
            velocity: v,
            goal: p,
            radius: world.radius,
        };
        let predicted = predict_constant_velocity(&robot, world.dt, horizon, case as u64);
        let rolled = rollout(&robot, &vec![ControlInput::zero(); horizon], world.dt, world.v_max, world.u_max)?;
        for (a, b) in predicted.positions.iter().zip(&rolled.positions) {
            worst = worst.max((a - b).amax());
        }
        let plan = Trajectory {
            start_step: case as u64,
            positions: (0..horizon)
                .map(|_| Vec3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(0.0..1.5)))
                .collect(),
        };
        identity &= align_plan(&plan, case as u64, &robot, world.dt, horizon) == plan;
    }
    Ok((worst, identity))
}

/// The team reward computed directly from its definition.
pub fn reward_oracle(robots: &[RobotState], matrix: &CommMatrix, cfg: &RewardConfig) -> f64 {
    let dist = |a: &Vec3, b: &Vec3| ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt();
    let everyone_home = robots.iter().all(|r| dist(&r.position, &r.goal) <= r.radius);
    let mut overlap = false;
    for (i, a) in robots.iter().enumerate() {
        for b in &robots[i + 1..] {
            overlap |= dist(&a.position, &b.position) < a.radius + b.radius;
        }
    }
    let n = robots.len();
    let requests = (0..n).map(|i| teammates(i, n).filter(|&j| matrix.get(i, j)).count()).sum::<usize>();
    let r_goal = if everyone_home { cfg.goal_reward } else { 0.0 };
    let r_collision = if overlap { -cfg.collision_penalty } else { 0.0 };
    cfg.w_goal * r_goal + cfg.w_collision * r_collision + cfg.w_comm * -(requests as f64)
}

/// Random four-robot worlds and request matrices, packed so goals are
/// reached and spheres overlap often enough to exercise every term.
pub fn random_reward_case(rng: &mut dyn RngCore, radius: f64) -> (WorldState, CommMatrix) {
    let n = 4;
    let robots: Vec<RobotState> = (0..n)
        .map(|_| {
            let p = Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(0.5..1.0));
            let goal = if rng.random_bool(0.9) {
                p + Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.0)
            } else {
                p + Vec3::new(rng.random_range(-2.0..2.0), 0.0, 0.0)
            };
            RobotState::at_rest(p, goal, radius)
        })
        .collect();
    let mut matrix = CommMatrix::zeros(n);
    for i in 0..n {
        for j in teammates(i, n) {
            matrix.set(i, j, rng.random_bool(0.5));
        }
    }
    (WorldState::initial(robots, 0.1, 2), matrix)
}

/// Count of random cases where the reward differs from the oracle.
pub fn reward_mismatches(cfg: &RewardConfig, cases: usize, rng: &mut dyn RngCore) -> usize {
    (0..cases)
        .filter(|_| {
            let (world, matrix) = random_reward_case(rng, 0.3);
            crate::env::compute_reward(&world, &matrix, cfg) != reward_oracle(&world.robots, &matrix, cfg)
        })
        .count()
}

/// Every check, in order. `seed` selects the random probes.
pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    let world = WorldConfig::default();
    let n = world.n;
    let obs_len = crate::env::observation_len(n);
    let mut rng = stream(seed, Purpose::SelfCheck, 1);
    let mut out = gradient_checks(n, obs_len, reference_backward, &mut rng)?;

    let corrupted = gradient_checks(n, obs_len, corrupted_backward, &mut rng)?;
    let smallest = corrupted.iter().map(|c| c.measured).fold(f64::INFINITY, f64::min);
    out.push(CheckOutcome {
        name: "corrupted backward is detected (smallest error)".into(),
        measured: smallest,
        tolerance: GRADIENT_TOL,
        passed: corrupted.iter().all(|c| !c.passed),
    });

    let composite = composite_gradient_error(n, obs_len, PROBES_PER_LAYER, &mut rng)?;
    out.push(CheckOutcome::below("actor-through-critic gradient", composite, COMPOSITE_GRADIENT_TOL));

    let planner_cfg = PlannerConfig::default();
    let planner_err = planner_oracle_error(&planner_cfg, 50, &mut rng)?;
    out.push(CheckOutcome::below("planner vs dense QP (m)", planner_err, PLANNER_ORACLE_TOL));

    let episode = EpisodeConfig::default();
    let contact = 2.0 * episode.world.radius;
    for offset in [0.0, 0.05] {
        let sep = head_on_min_separation(&episode, offset)?;
        out.push(CheckOutcome {
            name: format!("head-on separation, offset {offset} m (shortfall below 2r)"),
            measured: (contact - sep).max(0.0),
            tolerance: 0.0,
            passed: sep >= contact,
        });
    }

    let (pred_err, identity) = prediction_errors(&world, planner_cfg.horizon, 200, &mut rng)?;
    out.push(CheckOutcome {
        name: "constant-velocity prediction error (m)".into(),
        measured: pred_err,
        tolerance: 0.0,
        passed: pred_err == 0.0,
    });
    out.push(CheckOutcome {
        name: "plan alignment at zero shift is the identity".into(),
        measured: if identity { 0.0 } else { 1.0 },
        tolerance: 0.0,
        passed: identity,
    });

    let mismatches = reward_mismatches(&RewardConfig::default(), 1000, &mut rng);
    out.push(CheckOutcome {
        name: "reward vs direct formula (mismatches of 1000)".into(),
        measured: mismatches as f64,
        tolerance: 0.0,
        passed: mismatches == 0,
    });
    Ok(out)
}
