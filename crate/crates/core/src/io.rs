//! Output artifacts: metrics CSVs, the training log and trajectory records.
//!
//! Column order is fixed by the `*_COLUMNS` constants. Floats are written in
//! Rust's shortest round-trip form, so identical runs produce identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::env::{EpisodeResult, ScenarioKind, StepRecord};
use crate::error::{Error, Result};

pub const METRICS_COLUMNS: [&str; 7] = [
    "episode",
    "scenario",
    "policy",
    "steps",
    "collisions",
    "comm_requests",
    "mean_time_to_goal",
];

pub const COMPARE_COLUMNS: [&str; 7] = [
    "policy",
    "scenario",
    "episodes",
    "collision_episodes",
    "collisions",
    "comm_requests",
    "request_reduction_pct",
];

/// Fixed leading columns of the training log; per-agent critic losses and
/// actor objectives follow as `critic_loss_<i>` and `actor_objective_<i>`.
pub const TRAINING_LOG_COLUMNS: [&str; 7] = [
    "episode",
    "scenario",
    "return",
    "steps",
    "collisions",
    "comm_requests",
    "train_steps",
];

/// One evaluated episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub scenario: ScenarioKind,
    pub policy: String,
    pub steps: usize,
    pub collisions: usize,
    pub comm_requests: usize,
    /// Seconds, averaged over robots that reached their goal.
    pub mean_time_to_goal: Option<f64>,
}

impl EpisodeMetrics {
    pub fn from_result(episode: usize, scenario: ScenarioKind, policy: &str, result: &EpisodeResult, dt: f64) -> Self {
        Self {
            episode,
            scenario,
            policy: policy.to_string(),
            steps: result.steps,
            collisions: result.collisions,
            comm_requests: result.comm_requests,
            mean_time_to_goal: result.mean_time_to_goal(dt),
        }
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.episode.to_string(),
            self.scenario.to_string(),
            self.policy.clone(),
            self.steps.to_string(),
            self.collisions.to_string(),
            self.comm_requests.to_string(),
            self.mean_time_to_goal.map(|t| t.to_string()).unwrap_or_default(),
        ]
    }
}

/// One row of the policy × scenario comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub policy: String,
    /// A scenario label, or `all` for the per-policy total.
    pub scenario: String,
    pub episodes: usize,
    pub collision_episodes: usize,
    pub collisions: usize,
    pub comm_requests: usize,
    /// `100 · (1 − requests / full-communication requests)` on the same
    /// episodes.
    pub request_reduction_pct: f64,
}

impl CompareRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.policy.clone(),
            self.scenario.clone(),
            self.episodes.to_string(),
            self.collision_episodes.to_string(),
            self.collisions.to_string(),
            self.comm_requests.to_string(),
            format!("{:.3}", self.request_reduction_pct),
        ]
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLogRow {
    pub episode: usize,
    pub scenario: ScenarioKind,
    pub episode_return: f64,
    pub steps: usize,
    pub collisions: usize,
    pub comm_requests: usize,
    pub train_steps: u64,
    /// Per-agent means over the train steps of this episode, `None` when
    /// no update ran.
    pub critic_losses: Option<Vec<f64>>,
    pub actor_objectives: Option<Vec<f64>>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_metrics_csv(path: &Path, rows: &[EpisodeMetrics]) -> Result<()> {
    write_csv(path, &METRICS_COLUMNS, rows.iter().map(EpisodeMetrics::record))
}

pub fn write_compare_csv(path: &Path, rows: &[CompareRow]) -> Result<()> {
    write_csv(path, &COMPARE_COLUMNS, rows.iter().map(CompareRow::record))
}

/// Parse a metrics CSV written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpisodeMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    let bad = |what: &str| Error::Config(format!("{}: bad {what} in metrics file", path.display()));
    if r.headers()?.iter().ne(METRICS_COLUMNS) {
        return Err(bad("header"));
    }
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        let int = |i: usize| record[i].parse::<usize>().map_err(|_| bad(METRICS_COLUMNS[i]));
        out.push(EpisodeMetrics {
            episode: int(0)?,
            scenario: record[1].parse().map_err(|_| bad("scenario"))?,
            policy: record[2].to_string(),
            steps: int(3)?,
            collisions: int(4)?,
            comm_requests: int(5)?,
            mean_time_to_goal: match &record[6] {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("mean_time_to_goal"))?),
            },
        });
    }
    Ok(out)
}

/// Append-only training log, flushed after every row so an interrupted run
/// keeps what it logged.
pub struct TrainingLog {
    writer: csv::Writer<BufWriter<File>>,
    path: PathBuf,
    agents: usize,
}

impl TrainingLog {
    pub fn create(path: &Path, agents: usize) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(create(path)?);
        let mut header: Vec<String> = TRAINING_LOG_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend((0..agents).map(|i| format!("critic_loss_{i}")));
        header.extend((0..agents).map(|i| format!("actor_objective_{i}")));
        writer.write_record(&header)?;
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(Self {
            writer,
            path: path.to_path_buf(),
            agents,
        })
    }

    pub fn append(&mut self, row: &TrainingLogRow) -> Result<()> {
        let mut record = vec![
            row.episode.to_string(),
            row.scenario.to_string(),
            row.episode_return.to_string(),
            row.steps.to_string(),
            row.collisions.to_string(),
            row.comm_requests.to_string(),
            row.train_steps.to_string(),
        ];
        for values in [&row.critic_losses, &row.actor_objectives] {
            match values {
                Some(v) if v.len() == self.agents => record.extend(v.iter().map(f64::to_string)),
                Some(v) => return Err(Error::shape("training log per-agent values", self.agents, v.len())),
                None => record.extend(std::iter::repeat_n(String::new(), self.agents)),
            }
        }
        self.writer.write_record(&record)?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Serialize)]
struct TrajectoryLine<'a> {
    episode: usize,
    step: u64,
    robot: usize,
    position: [f64; 3],
    velocity: [f64; 3],
    comm_row: &'a [u8],
    at_goal: bool,
}

/// Line-delimited JSON trajectory records.
pub struct TrajectoryLog {
    writer: BufWriter<File>,
    path: PathBuf,
}

impl TrajectoryLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            writer: create(path)?,
            path: path.to_path_buf(),
        })
    }

    pub fn write_episode(&mut self, episode: usize, records: &[StepRecord]) -> Result<()> {
        for r in records {
            let line = TrajectoryLine {
                episode,
                step: r.step,
                robot: r.robot,
                position: r.position,
                velocity: r.velocity,
                comm_row: &r.comm_row,
                at_goal: r.at_goal,
            };
            serde_json::to_writer(&mut self.writer, &line).map_err(|e| Error::io(&self.path, e.into()))?;
            self.writer.write_all(b"\n").map_err(|e| Error::io(&self.path, e))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}
