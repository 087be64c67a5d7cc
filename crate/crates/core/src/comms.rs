//! Communication requests: the request matrix, the four policies that fill
//! it and the per-step communication cost.

use rand::{Rng, RngCore};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::neural::MlpParams;
use crate::world::WorldState;

/// `n x n` binary matrix; entry `(i, j)` set means robot `i` requests robot
/// `j`'s plan. The diagonal is always clear.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CommMatrix {
    n: usize,
    entries: Vec<bool>,
}

impl CommMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: vec![false; n * n],
        }
    }

    pub fn full(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in teammates(i, n) {
                m.entries[i * n + j] = true;
            }
        }
        m
    }

    /// Build from per-robot rows over teammates (length `n - 1`, self skipped).
    pub fn from_teammate_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() + 1 != n {
                return Err(Error::shape("communication row", n.saturating_sub(1), row.len()));
            }
            for (slot, j) in teammates(i, n).enumerate() {
                m.entries[i * n + j] = row[slot];
            }
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.n + j]
    }

    /// Set `(i, j)`; requests to self are ignored.
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        if i != j {
            self.entries[i * self.n + j] = value;
        }
    }

    /// Robot `i`'s row over its teammates in ascending index order.
    pub fn teammate_row(&self, i: usize) -> Vec<bool> {
        teammates(i, self.n).map(|j| self.get(i, j)).collect()
    }

    /// Full row of length `n`, including the (always clear) diagonal.
    pub fn row(&self, i: usize) -> &[bool] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

/// Teammates of robot `i` in ascending order, self skipped.
pub fn teammates(i: usize, n: usize) -> impl Iterator<Item = usize> {
    (0..n).filter(move |&j| j != i)
}

/// Number of requests issued in one step.
pub fn comm_cost(matrix: &CommMatrix) -> usize {
    matrix.entries.iter().filter(|&&e| e).count()
}

/// Per-robot actors plus the execution threshold of the learned policy.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedPolicy {
    pub actors: Vec<MlpParams>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyKind {
    FullComm,
    NoComm,
    /// Request every teammate closer than `epsilon` meters.
    DistanceBased { epsilon: f64 },
    Learned(LearnedPolicy),
}

impl PolicyKind {
    pub fn label(&self) -> String {
        match self {
            PolicyKind::FullComm => "full".into(),
            PolicyKind::NoComm => "none".into(),
            PolicyKind::DistanceBased { epsilon } => format!("dist:{epsilon}"),
            PolicyKind::Learned(_) => "learned".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PolicyKind::DistanceBased { epsilon } if !(*epsilon > 0.0) => {
                Err(Error::Policy(format!("distance threshold must be > 0, got {epsilon}")))
            }
            PolicyKind::Learned(p) if !(p.threshold > 0.0 && p.threshold < 1.0) => {
                Err(Error::Policy(format!("execution threshold must lie in (0, 1), got {}", p.threshold)))
            }
            _ => Ok(()),
        }
    }
}

/// Actor scores of robot `i` over its teammates.
pub fn actor_scores(actor: &MlpParams, observation: &Observation, n: usize) -> Result<Vec<f64>> {
    if actor.output_size() != n - 1 {
        return Err(Error::Policy(format!(
            "actor emits {} scores but the team has {} teammates",
            actor.output_size(),
            n - 1
        )));
    }
    if actor.input_size() != observation.len() {
        return Err(Error::Policy(format!(
            "actor expects {} inputs, observation has {}",
            actor.input_size(),
            observation.len()
        )));
    }
    actor.predict(observation.as_slice())
}

/// Request flags for scores against one shared threshold (strict `>`).
pub fn threshold_row(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s > threshold).collect()
}

/// Decide the request matrix for this step. With `explore` supplied, the
/// learned policy replaces its threshold by one uniform draw per robot.
pub fn decide_comm(
    policy: &PolicyKind,
    observations: &[Observation],
    world: &WorldState,
    explore: Option<&mut dyn RngCore>,
) -> Result<CommMatrix> {
    let n = world.n();
    match policy {
        PolicyKind::FullComm => Ok(CommMatrix::full(n)),
        PolicyKind::NoComm => Ok(CommMatrix::zeros(n)),
        PolicyKind::DistanceBased { epsilon } => {
            let mut m = CommMatrix::zeros(n);
            for i in 0..n {
                for j in teammates(i, n) {
                    let d = (world.robots[i].position - world.robots[j].position).norm();
                    m.set(i, j, d < *epsilon);
                }
            }
            Ok(m)
        }
        PolicyKind::Learned(learned) => {
            if learned.actors.len() != n || observations.len() != n {
                return Err(Error::Policy(format!(
                    "learned policy has {} actors and {} observations for {n} robots",
                    learned.actors.len(),
                    observations.len()
                )));
            }
            let mut explore = explore;
            let mut rows = Vec::with_capacity(n);
            for (actor, obs) in learned.actors.iter().zip(observations) {
                let scores = actor_scores(actor, obs, n)?;
                let threshold = match explore.as_deref_mut() {
                    Some(rng) => rng.random::<f64>(),
                    None => learned.threshold,
                };
                rows.push(threshold_row(&scores, threshold));
            }
            CommMatrix::from_teammate_rows(&rows)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::build_observation;
    use crate::neural::Activation;
    use crate::world::{RobotState, Vec3};
    use proptest::prelude::*;

    fn world(points: &[[f64; 3]]) -> WorldState {
        let robots = points
            .iter()
            .map(|p| RobotState::at_rest(Vec3::from(*p), Vec3::from(*p), 0.3))
            .collect();
        WorldState::initial(robots, 0.1, 10)
    }

    fn observations(w: &WorldState) -> Vec<Observation> {
        (0..w.n()).map(|i| build_observation(w, i)).collect()
    }

    #[test]
    fn full_and_none() {
        let w = world(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let obs = observations(&w);
        let full = decide_comm(&PolicyKind::FullComm, &obs, &w, None).unwrap();
        assert_eq!(comm_cost(&full), 12);
        assert!((0..4).all(|i| !full.get(i, i)));
        let none = decide_comm(&PolicyKind::NoComm, &obs, &w, None).unwrap();
        assert_eq!(comm_cost(&none), 0);
    }

    #[test]
    fn distance_policy_requests_within_epsilon() {
        let w = world(&[[0.0; 3], [3.0, 0.0, 0.0], [10.0, 0.0, 0.0], [20.0, 0.0, 0.0]]);
        let m = decide_comm(&PolicyKind::DistanceBased { epsilon: 4.0 }, &observations(&w), &w, None).unwrap();
        assert!(m.get(0, 1) && m.get(1, 0));
        assert_eq!(comm_cost(&m), 2);
        // strict inequality at epsilon
        let m = decide_comm(&PolicyKind::DistanceBased { epsilon: 3.0 }, &observations(&w), &w, None).unwrap();
        assert_eq!(comm_cost(&m), 0);
    }

    #[test]
    fn learned_threshold() {
        let w = world(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let mut actor = MlpParams::zeros(&[24, 4, 3], Activation::Identity);
        actor.layers[1].biases = vec![0.3; 3];
        let policy = PolicyKind::Learned(LearnedPolicy {
            actors: vec![actor; 4],
            threshold: 0.5,
        });
        let m = decide_comm(&policy, &observations(&w), &w, None).unwrap();
        assert_eq!(comm_cost(&m), 0);
    }

    #[test]
    fn learned_shape_mismatch_is_policy_error() {
        let w = world(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let actor = MlpParams::zeros(&[18, 4, 3], Activation::Sigmoid);
        let policy = PolicyKind::Learned(LearnedPolicy {
            actors: vec![actor; 3],
            threshold: 0.5,
        });
        assert!(matches!(
            decide_comm(&policy, &observations(&w), &w, None),
            Err(Error::Policy(_))
        ));
    }

    #[test]
    fn cost_counts_entries() {
        let mut m = CommMatrix::zeros(4);
        assert_eq!(comm_cost(&m), 0);
        m.set(2, 1, true);
        m.set(3, 3, true);
        assert_eq!(comm_cost(&m), 1);
        assert_eq!(comm_cost(&CommMatrix::full(4)), 12);
    }

    proptest! {
        #[test]
        fn distance_policy_properties(
            pts in prop::collection::vec(prop::array::uniform3(-4.0f64..4.0), 4),
            eps_small in 0.01f64..3.0,
            extra in 0.0f64..5.0,
        ) {
            let w = world(&[pts[0], pts[1], pts[2], pts[3]]);
            let obs = observations(&w);
            let small = decide_comm(&PolicyKind::DistanceBased { epsilon: eps_small }, &obs, &w, None).unwrap();
            let large = decide_comm(&PolicyKind::DistanceBased { epsilon: eps_small + extra }, &obs, &w, None).unwrap();
            prop_assert!(small.is_symmetric());
            prop_assert!(comm_cost(&small) <= comm_cost(&large));
            let huge = decide_comm(&PolicyKind::DistanceBased { epsilon: 1e3 }, &obs, &w, None).unwrap();
            prop_assert_eq!(huge, CommMatrix::full(4));
            let tiny = decide_comm(&PolicyKind::DistanceBased { epsilon: 1e-12 }, &obs, &w, None).unwrap();
            prop_assert_eq!(comm_cost(&tiny), 0);
        }
    }
}
