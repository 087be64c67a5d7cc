use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scenario::ScenarioKind;

/// Phase boundaries as fractions of the total episode count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumConfig {
    /// End of the random-only phase.
    pub phase1_end: f64,
    /// End of the random/swap phase; all three scenarios afterwards.
    pub phase2_end: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            phase1_end: 0.2,
            phase2_end: 0.5,
        }
    }
}

/// Probability of each scenario, indexed like [`ScenarioKind::ALL`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioDistribution {
    pub probabilities: [f64; 3],
}

impl ScenarioDistribution {
    pub fn probability(&self, kind: ScenarioKind) -> f64 {
        let idx = ScenarioKind::ALL.iter().position(|k| *k == kind).unwrap_or(0);
        self.probabilities[idx]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ScenarioKind {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (kind, p) in ScenarioKind::ALL.iter().zip(self.probabilities) {
            acc += p;
            if u < acc {
                return *kind;
            }
        }
        *ScenarioKind::ALL
            .iter()
            .zip(self.probabilities)
            .rev()
            .find(|(_, p)| *p > 0.0)
            .map(|(k, _)| k)
            .unwrap_or(&ScenarioKind::Random)
    }
}

/// Easy-to-hard scenario mix for `episode` out of `total`.
pub fn curriculum_schedule(episode: usize, total: usize, cfg: &CurriculumConfig) -> ScenarioDistribution {
    let progress = episode as f64 / total.max(1) as f64;
    let probabilities = if progress < cfg.phase1_end {
        [1.0, 0.0, 0.0]
    } else if progress < cfg.phase2_end {
        [0.5, 0.5, 0.0]
    } else {
        [1.0 / 3.0; 3]
    };
    ScenarioDistribution { probabilities }
}
