//! Assumed teammate trajectories: communicated plans, cached stale plans
//! and constant-velocity extrapolation.

use crate::comms::teammates;
use crate::planner::Trajectory;
use crate::world::{RobotState, WorldState};

/// `position_k = p + k·dt·v` for `k = 1..=horizon`, accumulated step by
/// step so it reproduces a zero-input rollout bit for bit.
pub fn predict_constant_velocity(observed: &RobotState, dt: f64, horizon: usize, now: u64) -> Trajectory {
    let mut positions = Vec::with_capacity(horizon);
    let mut p = observed.position;
    for _ in 0..horizon {
        for c in 0..3 {
            p[c] = p[c] + dt * observed.velocity[c] + 0.5 * dt * dt * 0.0;
        }
        positions.push(p);
    }
    Trajectory {
        start_step: now,
        positions,
    }
}

/// Re-index a stored plan so element `k` is the position at step `now + k + 1`.
///
/// Positions past the end of the stored plan continue at the velocity of
/// its last segment. A plan `horizon` or more steps old, or one with fewer
/// than two points, is replaced by the constant-velocity prediction of
/// `observed`.
pub fn align_plan(stored: &Trajectory, now: u64, observed: &RobotState, dt: f64, horizon: usize) -> Trajectory {
    let len = stored.positions.len();
    let shift = now.saturating_sub(stored.start_step) as usize;
    if now < stored.start_step || shift >= horizon || len < 2 {
        return predict_constant_velocity(observed, dt, horizon, now);
    }
    if shift == 0 && len == horizon {
        return stored.clone();
    }
    let last = stored.positions[len - 1];
    let segment = last - stored.positions[len - 2];
    let positions = (0..horizon)
        .map(|k| {
            let idx = k + shift;
            if idx < len {
                stored.positions[idx]
            } else {
                last + (idx - (len - 1)) as f64 * segment
            }
        })
        .collect();
    Trajectory {
        start_step: now,
        positions,
    }
}

/// Plans robot `owner` has received, keyed by teammate index.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanCache {
    owner: usize,
    entries: Vec<Option<Trajectory>>,
}

impl PlanCache {
    pub fn new(owner: usize, n: usize) -> Self {
        Self {
            owner,
            entries: vec![None; n],
        }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn get(&self, j: usize) -> Option<&Trajectory> {
        self.entries.get(j).and_then(Option::as_ref)
    }

    /// Store a received plan; plans from the owner itself are dropped.
    pub fn store(&mut self, j: usize, plan: Trajectory) {
        if j != self.owner {
            self.entries[j] = Some(plan);
        }
    }

    /// Cached plan of `j` that still overlaps the horizon starting at `now`.
    pub fn fresh(&self, j: usize, now: u64, horizon: usize) -> Option<&Trajectory> {
        self.get(j)
            .filter(|t| now >= t.start_step && ((now - t.start_step) as usize) < horizon)
    }

    pub fn len(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Assumed trajectories of every teammate of robot `i` (ascending index,
/// self skipped). `comm_row` is robot `i`'s full request row of length
/// `n`; requested teammates deliver their previous-step plan from
/// `world.current_plans`, which also refreshes the cache.
pub fn assemble_assumed_trajectories(
    i: usize,
    comm_row: &[bool],
    cache: &mut PlanCache,
    world: &WorldState,
    dt: f64,
    horizon: usize,
) -> Vec<Trajectory> {
    let n = world.n();
    debug_assert_eq!(comm_row.len(), n);
    let now = world.time_step;
    teammates(i, n)
        .map(|j| {
            let observed = &world.robots[j];
            if comm_row[j] {
                let plan = world.current_plans[j].clone();
                let aligned = align_plan(&plan, now, observed, dt, horizon);
                cache.store(j, plan);
                aligned
            } else if let Some(plan) = cache.fresh(j, now, horizon) {
                align_plan(plan, now, observed, dt, horizon)
            } else {
                predict_constant_velocity(observed, dt, horizon, now)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::rollout;
    use crate::world::{step_dynamics, ControlInput, Vec3};
    use proptest::prelude::*;

    fn state(p: [f64; 3], v: [f64; 3]) -> RobotState {
        RobotState {
            position: Vec3::from(p),
            velocity: Vec3::from(v),
            goal: Vec3::zeros(),
            radius: 0.3,
        }
    }

    fn line(start: u64, origin: f64, speed: f64, len: usize) -> Trajectory {
        Trajectory {
            start_step: start,
            positions: (1..=len).map(|k| Vec3::new(origin + speed * k as f64, 0.0, 0.0)).collect(),
        }
    }

    #[test]
    fn constant_velocity_closed_form() {
        let t = predict_constant_velocity(&state([0.0, 0.0, 1.0], [1.0, 0.0, 0.0]), 0.1, 3, 0);
        let expected = [0.1, 0.2, 0.30000000000000004];
        for (p, x) in t.positions.iter().zip(expected) {
            assert_eq!(*p, Vec3::new(x, 0.0, 1.0));
        }
        let still = predict_constant_velocity(&state([1.0, 2.0, 3.0], [0.0; 3]), 0.1, 5, 0);
        assert!(still.positions.iter().all(|p| *p == Vec3::new(1.0, 2.0, 3.0)));
    }

    #[test]
    fn zero_shift_is_identity() {
        let t = line(7, 0.0, 0.2, 10);
        assert_eq!(align_plan(&t, 7, &state([5.0; 3], [0.0; 3]), 0.1, 10), t);
    }

    #[test]
    fn stale_plan_falls_back() {
        let t = line(3, 0.0, 0.2, 10);
        let obs = state([9.0, 0.0, 0.0], [0.5, 0.0, 0.0]);
        assert_eq!(align_plan(&t, 13, &obs, 0.1, 10), predict_constant_velocity(&obs, 0.1, 10, 13));
        let short = Trajectory {
            start_step: 3,
            positions: vec![Vec3::zeros()],
        };
        assert_eq!(align_plan(&short, 3, &obs, 0.1, 10), predict_constant_velocity(&obs, 0.1, 10, 3));
    }

    #[test]
    fn shifted_plan_extrapolates_last_segment() {
        // Oracle: a straight line at 0.2 m/step continued past its end.
        let t = line(0, 0.0, 0.25, 10);
        let a = align_plan(&t, 2, &state([0.0; 3], [0.0; 3]), 0.1, 10);
        assert_eq!(a.start_step, 2);
        for k in 0..10 {
            let expected = 0.25 * (k + 3) as f64;
            assert_eq!(a.positions[k], Vec3::new(expected, 0.0, 0.0), "k = {k}");
        }
        assert_eq!(&a.positions[..8], &t.positions[2..]);
    }

    fn world_with_plans() -> WorldState {
        let robots = vec![
            state([0.0, 0.0, 0.0], [0.5, 0.0, 0.0]),
            state([3.0, 0.0, 0.0], [-0.5, 0.0, 0.0]),
            state([0.0, 3.0, 0.0], [0.0, 0.25, 0.0]),
        ];
        let mut w = WorldState::initial(robots, 0.1, 10);
        w.time_step = 5;
        // Distinctive previous-step plans: curved paths nobody would extrapolate.
        w.current_plans = (0..3)
            .map(|j| Trajectory {
                start_step: 4,
                positions: (1..=10).map(|k| Vec3::new(j as f64, (k * k) as f64 * 0.01, 1.0)).collect(),
            })
            .collect();
        w
    }

    #[test]
    fn full_row_uses_shifted_previous_plans() {
        let w = world_with_plans();
        let mut cache = PlanCache::new(0, 3);
        let out = assemble_assumed_trajectories(0, &[false, true, true], &mut cache, &w, 0.1, 10);
        assert_eq!(out.len(), 2);
        for (slot, j) in [1usize, 2].iter().enumerate() {
            assert_eq!(out[slot], align_plan(&w.current_plans[*j], 5, &w.robots[*j], 0.1, 10));
            assert_eq!(out[slot].positions[0], w.current_plans[*j].positions[1]);
        }
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn empty_row_empty_cache_is_constant_velocity() {
        let w = world_with_plans();
        let mut cache = PlanCache::new(1, 3);
        let out = assemble_assumed_trajectories(1, &[false; 3], &mut cache, &w, 0.1, 10);
        assert_eq!(out[0], predict_constant_velocity(&w.robots[0], 0.1, 10, 5));
        assert_eq!(out[1], predict_constant_velocity(&w.robots[2], 0.1, 10, 5));
        assert!(cache.is_empty());
    }

    #[test]
    fn cached_plan_reused_next_step() {
        let mut w = world_with_plans();
        let mut cache = PlanCache::new(0, 3);
        assemble_assumed_trajectories(0, &[false, true, false], &mut cache, &w, 0.1, 10);
        let received = w.current_plans[1].clone();
        // Next step: new plans exist, but robot 0 does not ask again.
        w.time_step = 6;
        for plan in &mut w.current_plans {
            plan.start_step = 5;
            plan.positions.iter_mut().for_each(|p| p.z = -4.0);
        }
        let out = assemble_assumed_trajectories(0, &[false; 3], &mut cache, &w, 0.1, 10);
        assert_eq!(out[0], align_plan(&received, 6, &w.robots[1], 0.1, 10));
        assert_eq!(out[0].positions[0], received.positions[2]);
        assert_eq!(out[1], predict_constant_velocity(&w.robots[2], 0.1, 10, 6));
        assert_eq!(cache.get(1), Some(&received));
    }

    #[test]
    fn constant_velocity_robot_predicted_exactly() {
        let r = state([0.3, -1.2, 0.7], [1.1, -0.4, 0.05]);
        let pred = predict_constant_velocity(&r, 0.1, 10, 0);
        let mut s = r;
        for p in &pred.positions {
            s = step_dynamics(&s, &ControlInput::zero(), 0.1, 2.0, 2.0).unwrap();
            assert_eq!(*p, s.position);
        }
    }

    proptest! {
        #[test]
        fn prediction_matches_zero_input_rollout(
            p in prop::array::uniform3(-5.0f64..5.0),
            v in prop::array::uniform3(-2.0f64..2.0),
            horizon in 1usize..15,
        ) {
            let r = state(p, v);
            let pred = predict_constant_velocity(&r, 0.1, horizon, 0);
            let rolled = rollout(&r, &vec![ControlInput::zero(); horizon], 0.1, 2.0, 2.0).unwrap();
            prop_assert_eq!(pred.positions, rolled.positions);
        }

        #[test]
        fn assemble_is_deterministic_and_sized(
            mask in prop::collection::vec(any::<bool>(), 3),
            owner in 0usize..3,
        ) {
            let w = world_with_plans();
            let mut row = mask.clone();
            row[owner] = false;
            let mut c1 = PlanCache::new(owner, 3);
            let mut c2 = PlanCache::new(owner, 3);
            let a = assemble_assumed_trajectories(owner, &row, &mut c1, &w, 0.1, 10);
            let b = assemble_assumed_trajectories(owner, &row, &mut c2, &w, 0.1, 10);
            prop_assert_eq!(a.len(), 2);
            prop_assert!(a.iter().all(|t| t.positions.len() == 10));
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(c1, c2);
        }
    }
}
