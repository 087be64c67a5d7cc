//! Training, evaluation and comparison runs over a [`RunConfig`].

use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::checkpoint::Checkpoint;
use crate::comms::{LearnedPolicy, PolicyKind};
use crate::config::{PolicySpec, RunConfig};
use crate::env::{curriculum_schedule, observation_len, run_episode, EpisodeResult, ScenarioKind};
use crate::error::{Error, Result};
use crate::io::{
    write_compare_csv, write_metrics_csv, CompareRow, EpisodeMetrics, TrainingLog, TrainingLogRow, TrajectoryLog,
};
use crate::maddpg::MaddpgTrainer;
use crate::planner::Planner;
use crate::seeding::{evaluation_stream, stream, Purpose};

pub const TRAINING_LOG_FILE: &str = "training_log.csv";
pub const FINAL_CHECKPOINT_FILE: &str = "final.ckpt";
pub const INTERRUPTED_CHECKPOINT_FILE: &str = "interrupted.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRAJECTORY_FILE: &str = "trajectories.jsonl";
pub const COMPARE_FILE: &str = "compare.csv";
pub const COMPARE_METRICS_FILE: &str = "compare_metrics.csv";

/// File name of the intermediate checkpoint written after `episodes`.
pub fn checkpoint_file(episodes: usize) -> String {
    format!("checkpoint_{episodes:06}.ckpt")
}

pub fn build_planner(cfg: &RunConfig) -> Result<Planner> {
    Planner::new(cfg.planner.clone(), &cfg.world)
}

/// Position of `kind` in [`ScenarioKind::ALL`]; evaluation streams are keyed
/// by it so every policy meets the same spawns.
pub fn scenario_slot(kind: ScenarioKind) -> usize {
    ScenarioKind::ALL.iter().position(|&k| k == kind).expect("listed scenario")
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub trainer: MaddpgTrainer,
    pub rows: Vec<TrainingLogRow>,
    /// Every checkpoint written, the final one last.
    pub checkpoints: Vec<PathBuf>,
}

impl TrainOutcome {
    pub fn final_checkpoint(&self) -> &Path {
        self.checkpoints.last().expect("training always writes a final checkpoint")
    }
}

/// Curriculum training. Writes the training log, a checkpoint after every
/// `checkpoint_every` episodes short of the last, and the final checkpoint.
/// If an episode fails, the team as it stood is saved to
/// [`INTERRUPTED_CHECKPOINT_FILE`] before the error is returned.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let n = cfg.world.n;
    let planner = build_planner(cfg)?;
    let episode_cfg = cfg.episode_config();
    let mut trainer = MaddpgTrainer::new(
        n,
        observation_len(n),
        cfg.maddpg.clone(),
        &mut stream(cfg.seed, Purpose::NetworkInit, 0),
        stream(cfg.seed, Purpose::ReplaySampling, 0),
    )?;
    let mut curriculum = stream(cfg.seed, Purpose::Curriculum, 0);
    let mut log = TrainingLog::create(&out.join(TRAINING_LOG_FILE), n)?;
    let total = cfg.training.episodes;
    let mut rows = Vec::with_capacity(total);
    let mut checkpoints = Vec::new();

    for episode in 0..total {
        let kind = curriculum_schedule(episode, total, &cfg.curriculum).sample(&mut curriculum);
        let mut rng = stream(cfg.seed, Purpose::TrainingEpisode, episode as u64);
        let result = match run_episode(&mut trainer, &cfg.scenario(kind), &episode_cfg, &planner, &mut rng) {
            Ok(r) => r,
            Err(e) => {
                let path = out.join(INTERRUPTED_CHECKPOINT_FILE);
                Checkpoint::from_trainer(&trainer, episode as u64).save(&path)?;
                warn!("episode {episode} failed; team saved to {}", path.display());
                return Err(e);
            }
        };
        let stats = trainer.take_stats();
        let row = TrainingLogRow {
            episode,
            scenario: kind,
            episode_return: result.total_reward,
            steps: result.steps,
            collisions: result.collisions,
            comm_requests: result.comm_requests,
            train_steps: trainer.train_steps(),
            critic_losses: stats.mean_critic_losses(),
            actor_objectives: stats.mean_actor_objectives(),
        };
        log.append(&row)?;
        rows.push(row);

        let done = episode + 1;
        if done % 100 == 0 || done == total {
            let recent = &rows[rows.len().saturating_sub(100)..];
            let collided = recent.iter().filter(|r| r.collisions > 0).count();
            let mean_return = recent.iter().map(|r| r.episode_return).sum::<f64>() / recent.len() as f64;
            info!(
                "episode {done}/{total}: mean return {mean_return:.2}, {collided}/{} collided, {} train steps",
                recent.len(),
                trainer.train_steps()
            );
        }
        let every = cfg.training.checkpoint_every;
        if every > 0 && done % every == 0 && done < total {
            let path = out.join(checkpoint_file(done));
            Checkpoint::from_trainer(&trainer, done as u64).save(&path)?;
            checkpoints.push(path);
        }
    }
    let path = out.join(FINAL_CHECKPOINT_FILE);
    Checkpoint::from_trainer(&trainer, total as u64).save(&path)?;
    checkpoints.push(path);
    Ok(TrainOutcome {
        trainer,
        rows,
        checkpoints,
    })
}

/// Deterministic learned policy stored in a checkpoint.
pub fn load_learned_policy(path: &Path, cfg: &RunConfig) -> Result<LearnedPolicy> {
    let ckpt = Checkpoint::load(path)?;
    let n = cfg.world.n;
    if ckpt.agents.len() != n {
        return Err(Error::Checkpoint(format!(
            "{}: holds {} agents but the world has {n} robots",
            path.display(),
            ckpt.agents.len()
        )));
    }
    if ckpt.agents.iter().any(|a| a.observation_len() != observation_len(n) || a.action_len() != n - 1) {
        return Err(Error::Checkpoint(format!("{}: network shapes do not fit the world", path.display())));
    }
    Ok(LearnedPolicy {
        actors: ckpt.actors(),
        threshold: cfg.maddpg.execution_threshold,
    })
}

pub fn resolve_policy(spec: &PolicySpec, cfg: &RunConfig) -> Result<PolicyKind> {
    let policy = match spec {
        PolicySpec::Full => PolicyKind::FullComm,
        PolicySpec::None => PolicyKind::NoComm,
        PolicySpec::Distance(epsilon) => PolicyKind::DistanceBased { epsilon: *epsilon },
        PolicySpec::Learned(path) => PolicyKind::Learned(load_learned_policy(path, cfg)?),
    };
    policy.validate()?;
    Ok(policy)
}

/// Run `episodes` evaluation episodes of `policy` on `kind` without
/// exploration, handing each result to `visit`.
pub fn evaluate_with(
    cfg: &RunConfig,
    policy: &PolicyKind,
    kind: ScenarioKind,
    episodes: usize,
    mut visit: impl FnMut(usize, EpisodeResult) -> Result<()>,
) -> Result<()> {
    let planner = build_planner(cfg)?;
    let episode_cfg = cfg.episode_config();
    let scenario = cfg.scenario(kind);
    let slot = scenario_slot(kind);
    let mut controller = policy.clone();
    for episode in 0..episodes {
        let mut rng = evaluation_stream(cfg.seed, slot, episode as u64);
        let result = run_episode(&mut controller, &scenario, &episode_cfg, &planner, &mut rng)?;
        visit(episode, result)?;
    }
    Ok(())
}

/// Per-episode metrics of an evaluation run.
pub fn evaluate(cfg: &RunConfig, policy: &PolicyKind, kind: ScenarioKind, episodes: usize) -> Result<Vec<EpisodeMetrics>> {
    let label = policy.label();
    let mut rows = Vec::with_capacity(episodes);
    evaluate_with(cfg, policy, kind, episodes, |episode, result| {
        rows.push(EpisodeMetrics::from_result(episode, kind, &label, &result, cfg.world.dt));
        Ok(())
    })?;
    Ok(rows)
}

/// The `evaluate` subcommand: metrics CSV plus, if enabled, the trajectory
/// log, both in `out`.
pub fn run_evaluate(
    cfg: &RunConfig,
    spec: &PolicySpec,
    kind: ScenarioKind,
    episodes: usize,
    out: &Path,
) -> Result<Vec<EpisodeMetrics>> {
    cfg.validate()?;
    let policy = resolve_policy(spec, cfg)?;
    let label = policy.label();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut trajectories = match cfg.evaluation.trajectory_log {
        true => Some(TrajectoryLog::create(&out.join(TRAJECTORY_FILE))?),
        false => None,
    };
    let mut rows = Vec::with_capacity(episodes);
    evaluate_with(cfg, &policy, kind, episodes, |episode, result| {
        if let Some(t) = trajectories.as_mut() {
            t.write_episode(episode, &result.log)?;
        }
        rows.push(EpisodeMetrics::from_result(episode, kind, &label, &result, cfg.world.dt));
        Ok(())
    })?;
    if let Some(t) = trajectories {
        t.finish()?;
    }
    write_metrics_csv(&out.join(METRICS_FILE), &rows)?;
    let collided = rows.iter().filter(|r| r.collisions > 0).count();
    let requests: usize = rows.iter().map(|r| r.comm_requests).sum();
    info!("{label} on {kind}: {collided}/{episodes} episodes collided, {requests} requests");
    Ok(rows)
}

/// Policies of the comparison: full, none, the distance baseline and, when
/// a checkpoint is configured, the learned policy.
pub fn compare_policies(cfg: &RunConfig) -> Vec<PolicySpec> {
    let mut specs = vec![
        PolicySpec::Full,
        PolicySpec::None,
        PolicySpec::Distance(cfg.evaluation.compare_distance),
    ];
    match cfg.evaluation.compare_checkpoint.as_str() {
        "" => warn!("no learned checkpoint configured; the comparison leaves the learned policy out"),
        path => specs.push(PolicySpec::Learned(PathBuf::from(path))),
    }
    specs
}

/// Aggregate per-episode metrics into the comparison table: one row per
/// policy and scenario, then one `all` row per policy. Reductions are
/// relative to the `full` rows.
pub fn compare_table(metrics: &[EpisodeMetrics]) -> Vec<CompareRow> {
    let mut policies: Vec<&str> = Vec::new();
    for m in metrics {
        if !policies.contains(&m.policy.as_str()) {
            policies.push(&m.policy);
        }
    }
    let aggregate = |policy: &str, scenario: Option<ScenarioKind>| {
        let rows: Vec<_> = metrics
            .iter()
            .filter(|m| m.policy == policy && scenario.is_none_or(|s| m.scenario == s))
            .collect();
        (
            rows.len(),
            rows.iter().filter(|m| m.collisions > 0).count(),
            rows.iter().map(|m| m.collisions).sum::<usize>(),
            rows.iter().map(|m| m.comm_requests).sum::<usize>(),
        )
    };
    let mut table = Vec::new();
    let scopes: Vec<Option<ScenarioKind>> = ScenarioKind::ALL.iter().copied().map(Some).chain([None]).collect();
    for policy in &policies {
        for &scope in &scopes {
            let (episodes, collision_episodes, collisions, comm_requests) = aggregate(policy, scope);
            if episodes == 0 {
                continue;
            }
            let full = aggregate("full", scope).3;
            let request_reduction_pct = if full > 0 {
                100.0 * (1.0 - comm_requests as f64 / full as f64)
            } else {
                0.0
            };
            table.push(CompareRow {
                policy: policy.to_string(),
                scenario: scope.map_or("all".to_string(), |s| s.to_string()),
                episodes,
                collision_episodes,
                collisions,
                comm_requests,
                request_reduction_pct,
            });
        }
    }
    table
}

/// The `compare` subcommand: every policy of [`compare_policies`] on every
/// scenario over the same evaluation episodes. Writes the pivot table and
/// the underlying per-episode metrics to `out`.
pub fn run_compare(cfg: &RunConfig, episodes: usize, out: &Path) -> Result<Vec<CompareRow>> {
    cfg.validate()?;
    let policies = compare_policies(cfg)
        .iter()
        .map(|spec| resolve_policy(spec, cfg))
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut metrics = Vec::new();
    for policy in &policies {
        for kind in ScenarioKind::ALL {
            metrics.extend(evaluate(cfg, policy, kind, episodes)?);
        }
        info!("compared {}", policy.label());
    }
    let table = compare_table(&metrics);
    write_metrics_csv(&out.join(COMPARE_METRICS_FILE), &metrics)?;
    write_compare_csv(&out.join(COMPARE_FILE), &table)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(policy: &str, scenario: ScenarioKind, collisions: usize, requests: usize) -> EpisodeMetrics {
        EpisodeMetrics {
            episode: 0,
            scenario,
            policy: policy.into(),
            steps: 100,
            collisions,
            comm_requests: requests,
            mean_time_to_goal: None,
        }
    }

    #[test]
    fn compare_table_reduces_against_full() {
        use ScenarioKind::*;
        let metrics = vec![
            m("full", Random, 0, 1200),
            m("full", AsymmetricSwapping, 0, 1200),
            m("none", Random, 0, 0),
            m("none", AsymmetricSwapping, 2, 0),
            m("dist:4", Random, 0, 300),
            m("dist:4", AsymmetricSwapping, 0, 900),
        ];
        let table = compare_table(&metrics);
        let row = |p: &str, s: &str| table.iter().find(|r| r.policy == p && r.scenario == s).unwrap();
        assert_eq!(row("full", "all").request_reduction_pct, 0.0);
        assert_eq!(row("none", "all").request_reduction_pct, 100.0);
        assert_eq!(row("none", "asym").collision_episodes, 1);
        assert_eq!(row("dist:4", "random").request_reduction_pct, 75.0);
        assert_eq!(row("dist:4", "all").request_reduction_pct, 50.0);
        assert!(table.iter().all(|r| r.scenario != "swap"));
        // policy order is preserved, scenarios then the total
        assert_eq!(table[0].policy, "full");
        assert_eq!(table[2].scenario, "all");
    }

    #[test]
    fn compare_skips_learned_without_checkpoint() {
        let mut cfg = RunConfig::default();
        assert_eq!(compare_policies(&cfg).len(), 3);
        cfg.evaluation.compare_checkpoint = "x.ckpt".into();
        assert_eq!(compare_policies(&cfg)[3], PolicySpec::Learned("x.ckpt".into()));
    }

    #[test]
    fn missing_checkpoint_is_an_error() {
        let cfg = RunConfig::default();
        let spec = PolicySpec::Learned("/nonexistent/team.ckpt".into());
        assert!(matches!(resolve_policy(&spec, &cfg), Err(Error::Io { .. })));
    }
}
