//! Multi-agent deterministic policy gradients with centralized critics.
//!
//! Each robot owns an actor on its local observation (sigmoid scores, one per
//! teammate) and a critic on the joint observations and joint scores of the
//! whole team. Critics consume the continuous scores, never the executed
//! binary requests, so the deterministic policy gradient can flow through
//! the action inputs.

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comms::{threshold_row, CommMatrix, LearnedPolicy};
use crate::env::{CommController, Decision, Observation, Transition};
use crate::error::{Error, Result};
use crate::neural::{
    optimizer_step, soft_update, Activation, AdamConfig, GradientBuffer, MlpParams, OptimizerState, StepOutcome,
};
use crate::world::WorldState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaddpgConfig {
    /// Discount factor.
    pub gamma: f64,
    /// Target-network blend factor.
    pub tau: f64,
    pub hidden_sizes: Vec<usize>,
    pub adam: AdamConfig,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Minimum stored transitions before any update.
    pub warmup: usize,
    /// Environment steps between consecutive train steps.
    pub train_every: usize,
    /// Global L2 bound applied to every gradient before the optimizer step.
    pub gradient_clip: f64,
    /// Execution threshold of the trained policy.
    pub execution_threshold: f64,
}

impl Default for MaddpgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.98,
            tau: 0.01,
            hidden_sizes: vec![64, 64],
            adam: AdamConfig::default(),
            buffer_capacity: 1_000_000,
            batch_size: 1024,
            warmup: 1024,
            train_every: 100,
            gradient_clip: 0.5,
            execution_threshold: 0.5,
        }
    }
}

impl MaddpgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("maddpg.{what}")));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.hidden_sizes.contains(&0) {
            return bad("hidden_sizes must be positive");
        }
        if self.buffer_capacity == 0 || self.batch_size == 0 || self.train_every == 0 {
            return bad("buffer_capacity, batch_size and train_every must be positive");
        }
        if !(self.gradient_clip > 0.0) {
            return bad("gradient_clip must be > 0 (use inf to disable)");
        }
        if !(self.execution_threshold > 0.0 && self.execution_threshold < 1.0) {
            return bad("execution_threshold must lie in (0, 1)");
        }
        if !(self.adam.learning_rate > 0.0) {
            return bad("adam.learning_rate must be > 0");
        }
        Ok(())
    }
}

/// One team step as stored for replay.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub observations: Vec<Vec<f64>>,
    /// Actor scores per robot over its teammates, in `(0, 1)`.
    pub scores: Vec<Vec<f64>>,
    /// Executed request matrix.
    pub matrix: CommMatrix,
    /// Shared team reward.
    pub reward: f64,
    pub next_observations: Vec<Vec<f64>>,
    /// Last step of its episode.
    pub done: bool,
    /// The episode ended in a collision; the only case that cuts bootstrapping.
    pub collision: bool,
}

impl TransitionSample {
    pub fn bootstrap_mask(&self) -> f64 {
        if self.collision {
            0.0
        } else {
            1.0
        }
    }
}

/// Fixed-capacity ring of transitions in flat storage.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    n: usize,
    obs_len: usize,
    len: usize,
    cursor: usize,
    pushed: u64,
    observations: Vec<f64>,
    next_observations: Vec<f64>,
    scores: Vec<f64>,
    matrices: Vec<bool>,
    rewards: Vec<f64>,
    done: Vec<bool>,
    collision: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, n: usize, obs_len: usize) -> Self {
        assert!(capacity > 0 && n >= 2, "replay buffer needs capacity > 0 and at least two robots");
        Self {
            capacity,
            n,
            obs_len,
            len: 0,
            cursor: 0,
            pushed: 0,
            observations: Vec::new(),
            next_observations: Vec::new(),
            scores: Vec::new(),
            matrices: Vec::new(),
            rewards: Vec::new(),
            done: Vec::new(),
            collision: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Slot the next push writes to.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Transitions pushed since creation, including overwritten ones.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    fn act_len(&self) -> usize {
        self.n - 1
    }

    fn validate(&self, t: &TransitionSample) -> Result<()> {
        let n = self.n;
        if t.observations.len() != n || t.next_observations.len() != n || t.scores.len() != n {
            return Err(Error::shape("transition robot count", n, t.observations.len()));
        }
        for obs in t.observations.iter().chain(&t.next_observations) {
            if obs.len() != self.obs_len {
                return Err(Error::shape("transition observation", self.obs_len, obs.len()));
            }
        }
        for s in &t.scores {
            if s.len() != self.act_len() {
                return Err(Error::shape("transition scores", self.act_len(), s.len()));
            }
            if s.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
                return Err(Error::Policy("stored scores must lie in (0, 1)".into()));
            }
        }
        if t.matrix.n() != n {
            return Err(Error::shape("transition matrix", n, t.matrix.n()));
        }
        if !t.reward.is_finite() {
            return Err(Error::Policy("transition reward is not finite".into()));
        }
        Ok(())
    }

    pub fn push(&mut self, t: &TransitionSample) -> Result<()> {
        self.validate(t)?;
        let obs: Vec<f64> = t.observations.concat();
        let next: Vec<f64> = t.next_observations.concat();
        let scores: Vec<f64> = t.scores.concat();
        let matrix: Vec<bool> = (0..self.n).flat_map(|i| t.matrix.row(i).to_vec()).collect();
        let slot = self.cursor;
        if slot == self.observations.len() / (self.n * self.obs_len) {
            self.observations.extend_from_slice(&obs);
            self.next_observations.extend_from_slice(&next);
            self.scores.extend_from_slice(&scores);
            self.matrices.extend_from_slice(&matrix);
            self.rewards.push(t.reward);
            self.done.push(t.done);
            self.collision.push(t.collision);
        } else {
            let ob = self.n * self.obs_len;
            let ac = self.n * self.act_len();
            let mx = self.n * self.n;
            self.observations[slot * ob..(slot + 1) * ob].copy_from_slice(&obs);
            self.next_observations[slot * ob..(slot + 1) * ob].copy_from_slice(&next);
            self.scores[slot * ac..(slot + 1) * ac].copy_from_slice(&scores);
            self.matrices[slot * mx..(slot + 1) * mx].copy_from_slice(&matrix);
            self.rewards[slot] = t.reward;
            self.done[slot] = t.done;
            self.collision[slot] = t.collision;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        self.pushed += 1;
        Ok(())
    }

    /// Copy of the stored transition in `slot`.
    pub fn get(&self, slot: usize) -> Option<TransitionSample> {
        if slot >= self.len {
            return None;
        }
        let (n, ol, al) = (self.n, self.obs_len, self.act_len());
        let split = |flat: &[f64], width: usize| -> Vec<Vec<f64>> {
            (0..n).map(|i| flat[i * width..(i + 1) * width].to_vec()).collect()
        };
        let ob = &self.observations[slot * n * ol..(slot + 1) * n * ol];
        let nx = &self.next_observations[slot * n * ol..(slot + 1) * n * ol];
        let sc = &self.scores[slot * n * al..(slot + 1) * n * al];
        let mx = &self.matrices[slot * n * n..(slot + 1) * n * n];
        let rows: Vec<Vec<bool>> = (0..n)
            .map(|i| (0..n).filter(|&j| j != i).map(|j| mx[i * n + j]).collect())
            .collect();
        Some(TransitionSample {
            observations: split(ob, ol),
            scores: split(sc, al),
            matrix: CommMatrix::from_teammate_rows(&rows).ok()?,
            reward: self.rewards[slot],
            next_observations: split(nx, ol),
            done: self.done[slot],
            collision: self.collision[slot],
        })
    }

    /// Uniform sample of `batch` stored slots, with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        if self.len == 0 {
            return Vec::new();
        }
        (0..batch).map(|_| rng.random_range(0..self.len)).collect()
    }

    /// Gather stored slots into column-per-sample matrices.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let (n, ol, al) = (self.n, self.obs_len, self.act_len());
        let b = indices.len();
        let gather = |flat: &[f64], agent: usize, width: usize| {
            DMatrix::from_fn(width, b, |r, c| flat[(indices[c] * n + agent) * width + r])
        };
        Batch {
            observations: (0..n).map(|i| gather(&self.observations, i, ol)).collect(),
            actions: (0..n).map(|i| gather(&self.scores, i, al)).collect(),
            next_observations: (0..n).map(|i| gather(&self.next_observations, i, ol)).collect(),
            rewards: indices.iter().map(|&s| self.rewards[s]).collect(),
            bootstrap: indices.iter().map(|&s| if self.collision[s] { 0.0 } else { 1.0 }).collect(),
        }
    }
}

/// Training batch, one column per sample and one matrix per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub observations: Vec<DMatrix<f64>>,
    pub actions: Vec<DMatrix<f64>>,
    pub next_observations: Vec<DMatrix<f64>>,
    pub rewards: Vec<f64>,
    /// `0` where the transition ended in a collision, else `1`.
    pub bootstrap: Vec<f64>,
}

impl Batch {
    pub fn from_samples(samples: &[TransitionSample]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Policy("empty batch".into()))?;
        let n = first.observations.len();
        let mut buffer = ReplayBuffer::new(samples.len(), n, first.observations[0].len());
        for s in samples {
            buffer.push(s)?;
        }
        let indices: Vec<usize> = (0..samples.len()).collect();
        Ok(buffer.batch(&indices))
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Stack per-agent observations, then per-agent actions, into critic inputs.
pub fn joint_input(observations: &[DMatrix<f64>], actions: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = observations.iter().chain(actions).map(|m| m.nrows()).sum();
    let cols = observations[0].ncols();
    let mut joint = DMatrix::zeros(rows, cols);
    let mut offset = 0;
    for m in observations.iter().chain(actions) {
        joint.rows_mut(offset, m.nrows()).copy_from(m);
        offset += m.nrows();
    }
    joint
}

/// Networks and optimizer states of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets {
    pub actor: MlpParams,
    pub target_actor: MlpParams,
    pub critic: MlpParams,
    pub target_critic: MlpParams,
    pub actor_optimizer: OptimizerState,
    pub critic_optimizer: OptimizerState,
}

impl AgentNets {
    /// Fresh agent for a team of `n` with `obs_len`-long observations;
    /// targets start as copies of the online networks.
    pub fn new<R: Rng + ?Sized>(n: usize, obs_len: usize, cfg: &MaddpgConfig, rng: &mut R) -> Self {
        let act_len = n - 1;
        let mut actor_sizes = vec![obs_len];
        actor_sizes.extend(&cfg.hidden_sizes);
        actor_sizes.push(act_len);
        let mut critic_sizes = vec![n * (obs_len + act_len)];
        critic_sizes.extend(&cfg.hidden_sizes);
        critic_sizes.push(1);
        let actor = MlpParams::new(&actor_sizes, Activation::Sigmoid, rng);
        let critic = MlpParams::new(&critic_sizes, Activation::Identity, rng);
        Self {
            actor_optimizer: OptimizerState::new(&actor, cfg.adam),
            critic_optimizer: OptimizerState::new(&critic, cfg.adam),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
        }
    }

    pub fn observation_len(&self) -> usize {
        self.actor.input_size()
    }

    pub fn action_len(&self) -> usize {
        self.actor.output_size()
    }

    pub fn is_consistent(&self) -> bool {
        self.actor.same_shape(&self.target_actor) && self.critic.same_shape(&self.target_critic)
    }
}

/// Exploratory decision of one robot: its scores and the requests drawn
/// against a single uniform threshold shared by all of its teammates.
pub fn act_explore<R: Rng + ?Sized>(actor: &MlpParams, observation: &[f64], rng: &mut R) -> Result<(Vec<f64>, Vec<bool>)> {
    let scores = actor.predict(observation)?;
    let threshold: f64 = rng.random();
    let row = threshold_row(&scores, threshold);
    Ok((scores, row))
}

fn check_team(agents: &[AgentNets], batch: &Batch) -> Result<()> {
    if agents.len() != batch.observations.len() || agents.len() < 2 {
        return Err(Error::shape("agents in batch", agents.len(), batch.observations.len()));
    }
    if batch.is_empty() {
        return Err(Error::Policy("empty batch".into()));
    }
    Ok(())
}

/// Critic inputs at the next observations with every agent's target actor.
fn target_joint_input(agents: &[AgentNets], batch: &Batch) -> Result<DMatrix<f64>> {
    let next_actions = agents
        .iter()
        .zip(&batch.next_observations)
        .map(|(a, obs)| a.target_actor.predict_batch(obs))
        .collect::<Result<Vec<_>>>()?;
    Ok(joint_input(&batch.next_observations, &next_actions))
}

fn targets_from_joint(agent: &AgentNets, batch: &Batch, joint_next: &DMatrix<f64>, gamma: f64) -> Result<Vec<f64>> {
    let q_next = agent.target_critic.predict_batch(joint_next)?;
    Ok((0..batch.len())
        .map(|b| batch.rewards[b] + gamma * batch.bootstrap[b] * q_next[(0, b)])
        .collect())
}

/// Bootstrapped critic targets `R + γ·mask·Q̄_i(z', μ̄(z'))` for agent `i`.
pub fn critic_target(batch: &Batch, agents: &[AgentNets], i: usize, gamma: f64) -> Result<Vec<f64>> {
    check_team(agents, batch)?;
    let joint_next = target_joint_input(agents, batch)?;
    targets_from_joint(&agents[i], batch, &joint_next, gamma)
}

/// Mean squared critic error and its parameter gradient.
pub fn critic_loss_gradient(critic: &MlpParams, joint: &DMatrix<f64>, targets: &[f64]) -> Result<(f64, GradientBuffer)> {
    let cache = critic.forward_batch(joint.clone())?;
    let q = cache.output();
    let b = targets.len() as f64;
    let residual = DMatrix::from_fn(1, targets.len(), |_, c| q[(0, c)] - targets[c]);
    let loss = residual.iter().map(|r| r * r).sum::<f64>() / b;
    let mut grads = GradientBuffer::zeros_like(critic);
    critic.backward_batch(&cache, &(residual * (2.0 / b)), Some(&mut grads))?;
    Ok((loss, grads))
}

/// Critic inputs with agent `i`'s action slot replaced by its current actor
/// output, plus the actor cache for backpropagation.
fn actor_joint(agents: &[AgentNets], i: usize, batch: &Batch) -> Result<(DMatrix<f64>, crate::neural::BatchCache)> {
    let cache = agents[i].actor.forward_batch(batch.observations[i].clone())?;
    let mut actions = batch.actions.clone();
    actions[i] = cache.output().clone();
    Ok((joint_input(&batch.observations, &actions), cache))
}

/// Mean critic value with agent `i` acting through its actor.
pub fn actor_objective(agents: &[AgentNets], i: usize, batch: &Batch) -> Result<f64> {
    check_team(agents, batch)?;
    let (joint, _) = actor_joint(agents, i, batch)?;
    let q = agents[i].critic.predict_batch(&joint)?;
    Ok(q.iter().sum::<f64>() / batch.len() as f64)
}

/// Actor objective and the gradient of its negation (the minimized
/// quantity) with respect to agent `i`'s actor parameters.
pub fn actor_objective_gradient(agents: &[AgentNets], i: usize, batch: &Batch) -> Result<(f64, GradientBuffer)> {
    check_team(agents, batch)?;
    let agent = &agents[i];
    let (joint, actor_cache) = actor_joint(agents, i, batch)?;
    let critic_cache = agent.critic.forward_batch(joint)?;
    let b = batch.len();
    let objective = critic_cache.output().iter().sum::<f64>() / b as f64;
    let out_grad = DMatrix::from_element(1, b, -1.0 / b as f64);
    let input_grad = agent.critic.backward_batch(&critic_cache, &out_grad, None)?;
    let obs_rows: usize = batch.observations.iter().map(|m| m.nrows()).sum();
    let act_len = agent.action_len();
    let offset = obs_rows + i * act_len;
    let action_grad = input_grad.rows(offset, act_len).into_owned();
    let mut grads = GradientBuffer::zeros_like(&agent.actor);
    agent.actor.backward_batch(&actor_cache, &action_grad, Some(&mut grads))?;
    Ok((objective, grads))
}

fn apply(params: &mut MlpParams, mut grads: GradientBuffer, opt: &mut OptimizerState, clip: f64) -> Result<StepOutcome> {
    if clip.is_finite() {
        grads.clip_norm(clip);
    }
    optimizer_step(params, &grads, opt)
}

/// One optimizer step on agent `i`'s critic toward `targets`. Returns the
/// pre-step loss.
pub fn update_critic(
    agents: &mut [AgentNets],
    i: usize,
    batch: &Batch,
    targets: &[f64],
    cfg: &MaddpgConfig,
) -> Result<(f64, StepOutcome)> {
    check_team(agents, batch)?;
    let joint = joint_input(&batch.observations, &batch.actions);
    let agent = &mut agents[i];
    let (loss, grads) = critic_loss_gradient(&agent.critic, &joint, targets)?;
    let outcome = apply(&mut agent.critic, grads, &mut agent.critic_optimizer, cfg.gradient_clip)?;
    Ok((loss, outcome))
}

/// One ascent step on agent `i`'s actor. Returns the pre-step objective.
pub fn update_actor(agents: &mut [AgentNets], i: usize, batch: &Batch, cfg: &MaddpgConfig) -> Result<(f64, StepOutcome)> {
    let (objective, grads) = actor_objective_gradient(agents, i, batch)?;
    let agent = &mut agents[i];
    let outcome = apply(&mut agent.actor, grads, &mut agent.actor_optimizer, cfg.gradient_clip)?;
    Ok((objective, outcome))
}

/// What one train step did.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainDiagnostics {
    /// `false` while the buffer is below warmup; nothing else is set then.
    pub updated: bool,
    pub critic_losses: Vec<f64>,
    pub actor_objectives: Vec<f64>,
    /// Mean actor score per agent over the batch.
    pub mean_scores: Vec<f64>,
    /// Per agent: a critic or actor gradient was non-finite and skipped.
    pub non_finite: Vec<bool>,
}

/// Critic then actor update for every agent on one shared batch, followed
/// by soft target updates. Targets use the pre-step target networks.
pub fn train_step<R: Rng + ?Sized>(
    agents: &mut [AgentNets],
    buffer: &ReplayBuffer,
    cfg: &MaddpgConfig,
    rng: &mut R,
) -> Result<TrainDiagnostics> {
    if buffer.is_empty() || buffer.len() < cfg.warmup {
        return Ok(TrainDiagnostics::default());
    }
    let indices = buffer.sample_indices(cfg.batch_size, rng);
    let batch = buffer.batch(&indices);
    check_team(agents, &batch)?;
    let joint_next = target_joint_input(agents, &batch)?;
    let targets = agents
        .iter()
        .map(|a| targets_from_joint(a, &batch, &joint_next, cfg.gamma))
        .collect::<Result<Vec<_>>>()?;
    let mut diag = TrainDiagnostics {
        updated: true,
        ..Default::default()
    };
    for i in 0..agents.len() {
        let (loss, critic_outcome) = update_critic(agents, i, &batch, &targets[i], cfg)?;
        let (objective, actor_outcome) = update_actor(agents, i, &batch, cfg)?;
        let scores = agents[i].actor.predict_batch(&batch.observations[i])?;
        diag.critic_losses.push(loss);
        diag.actor_objectives.push(objective);
        diag.mean_scores.push(scores.mean());
        diag.non_finite
            .push(critic_outcome == StepOutcome::SkippedNonFinite || actor_outcome == StepOutcome::SkippedNonFinite);
    }
    for agent in agents.iter_mut() {
        soft_update(&mut agent.target_critic, &agent.critic, cfg.tau)?;
        soft_update(&mut agent.target_actor, &agent.actor, cfg.tau)?;
    }
    Ok(diag)
}

/// Running sums of train-step diagnostics between two reads.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingStats {
    pub updates: usize,
    pub critic_loss_sums: Vec<f64>,
    pub actor_objective_sums: Vec<f64>,
    pub non_finite_steps: usize,
}

impl TrainingStats {
    fn record(&mut self, diag: &TrainDiagnostics) {
        if !diag.updated {
            return;
        }
        if self.critic_loss_sums.len() != diag.critic_losses.len() {
            self.critic_loss_sums = vec![0.0; diag.critic_losses.len()];
            self.actor_objective_sums = vec![0.0; diag.actor_objectives.len()];
        }
        self.updates += 1;
        for (s, v) in self.critic_loss_sums.iter_mut().zip(&diag.critic_losses) {
            *s += v;
        }
        for (s, v) in self.actor_objective_sums.iter_mut().zip(&diag.actor_objectives) {
            *s += v;
        }
        if diag.non_finite.iter().any(|&f| f) {
            self.non_finite_steps += 1;
        }
    }

    /// Mean critic loss per agent, `None` without updates.
    pub fn mean_critic_losses(&self) -> Option<Vec<f64>> {
        (self.updates > 0).then(|| self.critic_loss_sums.iter().map(|s| s / self.updates as f64).collect())
    }

    pub fn mean_actor_objectives(&self) -> Option<Vec<f64>> {
        (self.updates > 0).then(|| self.actor_objective_sums.iter().map(|s| s / self.updates as f64).collect())
    }
}

/// Learned communication controller that explores, stores every transition
/// and trains on its cadence.
#[derive(Debug, Clone)]
pub struct MaddpgTrainer {
    pub config: MaddpgConfig,
    pub agents: Vec<AgentNets>,
    pub buffer: ReplayBuffer,
    /// Draw thresholds uniformly instead of using the execution threshold.
    pub explore: bool,
    env_steps: u64,
    train_steps: u64,
    sampler: ChaCha8Rng,
    stats: TrainingStats,
}

impl MaddpgTrainer {
    /// `init` seeds the network weights; `sampler` drives replay sampling.
    pub fn new<R: Rng + ?Sized>(n: usize, obs_len: usize, config: MaddpgConfig, init: &mut R, sampler: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if n < 2 {
            return Err(Error::Config("learning to communicate needs at least two robots".into()));
        }
        let agents = (0..n).map(|_| AgentNets::new(n, obs_len, &config, init)).collect();
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity, n, obs_len),
            config,
            agents,
            explore: true,
            env_steps: 0,
            train_steps: 0,
            sampler,
            stats: TrainingStats::default(),
        })
    }

    /// Reassemble a trainer from stored parts (checkpoint restore). The
    /// replay contents are not part of a checkpoint and start empty.
    pub fn from_parts(
        config: MaddpgConfig,
        agents: Vec<AgentNets>,
        env_steps: u64,
        train_steps: u64,
        sampler: ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let first = agents.first().ok_or_else(|| Error::Checkpoint("no agents".into()))?;
        let (n, obs_len) = (agents.len(), first.observation_len());
        if agents.iter().any(|a| !a.is_consistent() || a.observation_len() != obs_len || a.action_len() != n - 1) {
            return Err(Error::Checkpoint("agent network shapes disagree".into()));
        }
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity, n, obs_len),
            config,
            agents,
            explore: true,
            env_steps,
            train_steps,
            sampler,
            stats: TrainingStats::default(),
        })
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    /// Deterministic policy with the configured execution threshold.
    pub fn learned_policy(&self) -> LearnedPolicy {
        LearnedPolicy {
            actors: self.agents.iter().map(|a| a.actor.clone()).collect(),
            threshold: self.config.execution_threshold,
        }
    }

    /// Statistics accumulated since the previous call.
    pub fn take_stats(&mut self) -> TrainingStats {
        std::mem::take(&mut self.stats)
    }

    /// Run one train step now, regardless of cadence.
    pub fn train_now(&mut self) -> Result<TrainDiagnostics> {
        let diag = train_step(&mut self.agents, &self.buffer, &self.config, &mut self.sampler)?;
        if diag.updated {
            self.train_steps += 1;
        }
        self.stats.record(&diag);
        Ok(diag)
    }
}

impl CommController for MaddpgTrainer {
    fn decide(&mut self, world: &WorldState, observations: &[Observation], rng: &mut dyn RngCore) -> Result<Decision> {
        let n = world.n();
        if observations.len() != n || self.agents.len() != n {
            return Err(Error::Policy(format!(
                "{} agents and {} observations for {n} robots",
                self.agents.len(),
                observations.len()
            )));
        }
        let mut scores = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        for (agent, obs) in self.agents.iter().zip(observations) {
            let (s, row) = if self.explore {
                act_explore(&agent.actor, obs.as_slice(), rng)?
            } else {
                let s = agent.actor.predict(obs.as_slice())?;
                let row = threshold_row(&s, self.config.execution_threshold);
                (s, row)
            };
            scores.push(s);
            rows.push(row);
        }
        Ok(Decision {
            matrix: CommMatrix::from_teammate_rows(&rows)?,
            scores: Some(scores),
        })
    }

    fn on_transition(&mut self, t: &Transition<'_>) -> Result<()> {
        let scores = t
            .decision
            .scores
            .clone()
            .ok_or_else(|| Error::Policy("learned transition without scores".into()))?;
        let as_vecs = |obs: &[Observation]| obs.iter().map(|o| o.as_slice().to_vec()).collect();
        self.buffer.push(&TransitionSample {
            observations: as_vecs(t.observations),
            scores,
            matrix: t.decision.matrix.clone(),
            reward: t.reward,
            next_observations: as_vecs(t.next_observations),
            done: t.done,
            collision: t.collision,
        })?;
        self.env_steps += 1;
        if self.env_steps.is_multiple_of(self.config.train_every as u64) {
            self.train_now()?;
        }
        Ok(())
    }
}

/// Deterministic sampler for a trainer, independent of exploration draws.
pub fn sampler_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
