//! Command-line surface of the `commplan` binary.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use log::info;

use crate::config::{PolicySpec, RunConfig, DEFAULT_CONFIG_TOML};
use crate::env::ScenarioKind;
use crate::experiment::{run_compare, run_evaluate, train, FINAL_CHECKPOINT_FILE, TRAINING_LOG_FILE};
use crate::selfcheck;

/// Environment variable holding the log filter (`error` .. `trace`).
pub const LOG_ENV: &str = "COMMPLAN_LOG";

#[derive(Debug, Parser)]
#[command(name = "commplan", version, about = "Learned communication for multi-robot receding-horizon planning")]
pub struct Cli {
    /// Run configuration (TOML); the embedded default when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Override the master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Print the default configuration and exit.
    #[arg(long)]
    pub print_default_config: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Curriculum training; writes the training log and checkpoints.
    Train {
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate one policy on one scenario without exploration.
    Evaluate {
        /// full | none | dist:EPS | learned:CHECKPOINT
        #[arg(long)]
        policy: Option<PolicySpec>,
        /// random | swap | asym
        #[arg(long)]
        scenario: Option<ScenarioKind>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Every policy on every scenario over the same episodes.
    Compare {
        /// Learned policy to include, as learned:CHECKPOINT.
        #[arg(long)]
        policy: Option<PolicySpec>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Numerical self-checks; fails if any check fails.
    Selfcheck,
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::from_toml_str(DEFAULT_CONFIG_TOML)?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

/// Run the parsed command line.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.print_default_config {
        print!("{DEFAULT_CONFIG_TOML}");
        return Ok(());
    }
    let Some(command) = &cli.command else {
        bail!("no subcommand given (train, evaluate, compare or selfcheck); see --help");
    };
    let mut cfg = load_config(&cli)?;
    let out = cfg.output_dir.clone();
    match command {
        Command::Train { episodes } => {
            if let Some(e) = episodes {
                cfg.training.episodes = *e;
            }
            cfg.validate()?;
            let outcome = train(&cfg, &out).context("training failed")?;
            info!(
                "trained {} episodes; log {}, final checkpoint {}",
                outcome.rows.len(),
                out.join(TRAINING_LOG_FILE).display(),
                out.join(FINAL_CHECKPOINT_FILE).display()
            );
        }
        Command::Evaluate {
            policy,
            scenario,
            episodes,
        } => {
            let policy = policy.clone().unwrap_or_else(|| cfg.evaluation.policy.clone());
            let scenario = scenario.unwrap_or(cfg.evaluation.scenario);
            let episodes = episodes.unwrap_or(cfg.evaluation.episodes);
            let rows = run_evaluate(&cfg, &policy, scenario, episodes, &out)?;
            let collided = rows.iter().filter(|r| r.collisions > 0).count();
            let requests: usize = rows.iter().map(|r| r.comm_requests).sum();
            println!("{policy} on {scenario}: {collided}/{episodes} episodes collided, {requests} requests");
        }
        Command::Compare { policy, episodes } => {
            match policy {
                Some(PolicySpec::Learned(path)) => cfg.evaluation.compare_checkpoint = path.display().to_string(),
                Some(other) => bail!("compare runs every baseline already; --policy only takes learned:CHECKPOINT, got {other}"),
                None => {}
            }
            let episodes = episodes.unwrap_or(cfg.evaluation.episodes);
            for row in run_compare(&cfg, episodes, &out)? {
                println!(
                    "{:<12} {:<7} collided {:>4}/{:<4} requests {:>8}  reduction {:>7.2}%",
                    row.policy, row.scenario, row.collision_episodes, row.episodes, row.comm_requests, row.request_reduction_pct
                );
            }
        }
        Command::Selfcheck => {
            let checks = selfcheck::run_all(cfg.seed)?;
            let mut failed = 0;
            for c in &checks {
                let status = if c.passed { "pass" } else { "FAIL" };
                println!("{status}  {:<60} measured {:.3e} (tolerance {:.0e})", c.name, c.measured, c.tolerance);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                bail!("{failed} of {} self-checks failed", checks.len());
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_line_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "commplan", "evaluate", "--policy", "dist:2.5", "--scenario", "swap", "--episodes", "3", "--seed", "9",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(9));
        match cli.command {
            Some(Command::Evaluate {
                policy,
                scenario,
                episodes,
            }) => {
                assert_eq!(policy, Some(PolicySpec::Distance(2.5)));
                assert_eq!(scenario, Some(ScenarioKind::RandomSwapping));
                assert_eq!(episodes, Some(3));
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["commplan", "evaluate", "--policy", "maybe"]).is_err());
        assert!(Cli::try_parse_from(["commplan", "evaluate", "--scenario", "circle"]).is_err());
    }
}
