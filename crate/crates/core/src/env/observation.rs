use crate::comms::teammates;
use crate::world::WorldState;

/// Egocentric view of robot `i`: own velocity, goal relative to own
/// position, then for each teammate in ascending index order its relative
/// position followed by its relative velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(Vec<f64>);

impl Observation {
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn own_velocity(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn relative_goal(&self) -> [f64; 3] {
        [self.0[3], self.0[4], self.0[5]]
    }

    /// Relative position of the teammate in `slot` (ascending order, self skipped).
    pub fn relative_position(&self, slot: usize) -> [f64; 3] {
        let b = 6 + 6 * slot;
        [self.0[b], self.0[b + 1], self.0[b + 2]]
    }

    pub fn relative_velocity(&self, slot: usize) -> [f64; 3] {
        let b = 9 + 6 * slot;
        [self.0[b], self.0[b + 1], self.0[b + 2]]
    }
}

pub fn observation_len(n: usize) -> usize {
    6 + 6 * (n - 1)
}

pub fn build_observation(world: &WorldState, i: usize) -> Observation {
    let n = world.n();
    let me = &world.robots[i];
    let mut values = Vec::with_capacity(observation_len(n));
    values.extend(me.velocity.iter());
    values.extend((me.goal - me.position).iter());
    for j in teammates(i, n) {
        let other = &world.robots[j];
        values.extend((other.position - me.position).iter());
        values.extend((other.velocity - me.velocity).iter());
    }
    Observation(values)
}
