use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{min_pairwise_distance, RobotState, Vec3, WorldConfig, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioKind {
    /// Independent random spawns and goals.
    #[serde(rename = "random")]
    Random,
    /// Goals are a derangement of the spawn positions.
    #[serde(rename = "swap", alias = "random_swapping")]
    RandomSwapping,
    /// One robot per x-y quadrant, each heading for the spawn of the
    /// robot in the diametrically opposed quadrant.
    #[serde(rename = "asym", alias = "asymmetric_swapping")]
    AsymmetricSwapping,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [
        ScenarioKind::Random,
        ScenarioKind::RandomSwapping,
        ScenarioKind::AsymmetricSwapping,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ScenarioKind::Random => "random",
            ScenarioKind::RandomSwapping => "swap",
            ScenarioKind::AsymmetricSwapping => "asym",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(ScenarioKind::Random),
            "swap" | "random_swapping" => Ok(ScenarioKind::RandomSwapping),
            "asym" | "asymmetric_swapping" => Ok(ScenarioKind::AsymmetricSwapping),
            other => Err(Error::Config(format!("unknown scenario '{other}' (expected random, swap or asym)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpawnConfig {
    /// Minimum pairwise distance between spawns (and between goals), meters.
    pub min_separation: f64,
    /// Spawns and goals lie in `[-x, x] × [-y, y]`.
    pub region_half_extents: [f64; 2],
    /// Spawns and goals lie in `z ∈ [-z_band, z_band]`.
    pub z_band: f64,
    /// Distance kept from the quadrant axes in the quadrant scenario.
    pub quadrant_margin: f64,
    pub max_attempts: usize,
}

impl Default for SpawnConfig {
    fn default() -> Self {
        Self {
            min_separation: 1.0,
            region_half_extents: [3.5, 3.5],
            z_band: 0.1,
            quadrant_margin: 0.5,
            max_attempts: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub spawn: SpawnConfig,
}

impl Scenario {
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            kind,
            spawn: SpawnConfig::default(),
        }
    }
}

/// Quadrant sign pattern, counter-clockwise from (+,+). Opposite quadrants
/// are two apart.
const QUADRANTS: [(f64, f64); 4] = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];

pub fn spawn_scenario<R: Rng + ?Sized>(
    scenario: &Scenario,
    world: &WorldConfig,
    horizon: usize,
    rng: &mut R,
) -> Result<WorldState> {
    let spawn = &scenario.spawn;
    if spawn.min_separation <= 2.0 * world.radius {
        return Err(Error::Config(format!(
            "spawn.min_separation {} must exceed twice the radius {}",
            spawn.min_separation, world.radius
        )));
    }
    let n = world.n;
    let (starts, goals) = match scenario.kind {
        ScenarioKind::Random => {
            let starts = separated_points(n, spawn, rng, scenario.kind)?;
            let goals = separated_points(n, spawn, rng, scenario.kind)?;
            (starts, goals)
        }
        ScenarioKind::RandomSwapping => {
            let starts = separated_points(n, spawn, rng, scenario.kind)?;
            let perm = derangement(n, rng);
            let goals = perm.iter().map(|&k| starts[k]).collect();
            (starts, goals)
        }
        ScenarioKind::AsymmetricSwapping => {
            if n != 4 {
                return Err(Error::Config(format!("the quadrant scenario needs exactly 4 robots, got {n}")));
            }
            let [hx, hy] = spawn.region_half_extents;
            if spawn.quadrant_margin >= hx.min(hy) {
                return Err(Error::Config("spawn.quadrant_margin leaves no room in the quadrants".into()));
            }
            quadrant_points(spawn, rng)?
        }
    };
    let robots: Vec<RobotState> = starts
        .into_iter()
        .zip(goals)
        .map(|(p, g)| RobotState::at_rest(p, g, world.radius))
        .collect();
    debug_assert!(min_pairwise_distance(&robots) > 2.0 * world.radius);
    Ok(WorldState::initial(robots, world.dt, horizon))
}

fn quadrant_points<R: Rng + ?Sized>(spawn: &SpawnConfig, rng: &mut R) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let [hx, hy] = spawn.region_half_extents;
    for _ in 0..spawn.max_attempts {
        let starts: Vec<Vec3> = QUADRANTS
            .iter()
            .map(|&(sx, sy)| {
                let x = sx * rng.random_range(spawn.quadrant_margin..hx);
                let y = sy * rng.random_range(spawn.quadrant_margin..hy);
                Vec3::new(x, y, z_sample(spawn, rng))
            })
            .collect();
        if min_distance(&starts) > spawn.min_separation {
            let goals = (0..4).map(|q| starts[(q + 2) % 4]).collect();
            return Ok((starts, goals));
        }
    }
    Err(Error::Spawn {
        scenario: ScenarioKind::AsymmetricSwapping.to_string(),
        attempts: spawn.max_attempts,
    })
}

fn z_sample<R: Rng + ?Sized>(spawn: &SpawnConfig, rng: &mut R) -> f64 {
    if spawn.z_band > 0.0 {
        rng.random_range(-spawn.z_band..spawn.z_band)
    } else {
        0.0
    }
}

fn min_distance(points: &[Vec3]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            best = best.min((points[i] - points[j]).norm());
        }
    }
    best
}

/// Rejection-sample `n` points with pairwise distance above the minimum.
fn separated_points<R: Rng + ?Sized>(
    n: usize,
    spawn: &SpawnConfig,
    rng: &mut R,
    kind: ScenarioKind,
) -> Result<Vec<Vec3>> {
    let [hx, hy] = spawn.region_half_extents;
    let mut points: Vec<Vec3> = Vec::with_capacity(n);
    let mut attempts = 0;
    while points.len() < n {
        attempts += 1;
        if attempts > spawn.max_attempts {
            return Err(Error::Spawn {
                scenario: kind.to_string(),
                attempts: spawn.max_attempts,
            });
        }
        let p = Vec3::new(rng.random_range(-hx..hx), rng.random_range(-hy..hy), z_sample(spawn, rng));
        if points.iter().all(|q| (p - q).norm() > spawn.min_separation) {
            points.push(p);
        }
    }
    Ok(points)
}

/// Uniform random permutation without fixed points (rejection on shuffles).
fn derangement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return perm;
        }
    }
}
