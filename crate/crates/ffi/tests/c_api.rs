use std::ffi::{CStr, CString};
use std::ptr;

use commplan::comms::PolicyKind;
use commplan::config::{RunConfig, DEFAULT_CONFIG_TOML};
use commplan::env::ScenarioKind;
use commplan::experiment::evaluate;
use commplan_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(cp_last_error_message()) }.to_string_lossy().into_owned()
}

fn planner() -> *mut CpPlanner {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { cp_planner_new(ptr::null(), &mut p) }, CpStatus::Ok);
    assert!(!p.is_null());
    p
}

fn simulation(policy: &str) -> *mut CpSimulation {
    let mut sim = ptr::null_mut();
    assert_eq!(unsafe { cp_simulation_new(ptr::null(), &mut sim) }, CpStatus::Ok);
    let spec = CString::new(policy).unwrap();
    assert_eq!(unsafe { cp_simulation_set_policy(sim, spec.as_ptr()) }, CpStatus::Ok);
    sim
}

#[test]
fn static_strings_are_available() {
    let version = unsafe { CStr::from_ptr(cp_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
    let config = unsafe { CStr::from_ptr(cp_default_config()) }.to_str().unwrap();
    assert_eq!(config, DEFAULT_CONFIG_TOML);
}

#[test]
fn lone_robot_plan_heads_for_its_goal_and_steps_within_limits() {
    let p = planner();
    let n = unsafe { cp_planner_horizon(p) };
    assert!(n > 0);
    let state = CpRobotState {
        position: [0.0, 0.0, 1.0],
        velocity: [0.0; 3],
        goal: [3.0, 0.0, 1.0],
        radius: 0.3,
    };
    let mut positions = vec![f64::NAN; n * 3];
    let mut input = [f64::NAN; 3];
    let status = unsafe { cp_planner_plan(p, &state, ptr::null(), 0, positions.as_mut_ptr(), input.as_mut_ptr()) };
    assert_eq!(status, CpStatus::Ok, "{}", last_error());
    assert!(positions.iter().all(|v| v.is_finite()));
    assert!(input[0] > 0.0, "first input {input:?} does not accelerate toward the goal");
    assert!(positions[(n - 1) * 3] > positions[0]);

    let mut next = state;
    let status = unsafe { cp_planner_step(p, &state, input.as_ptr(), &mut next) };
    assert_eq!(status, CpStatus::Ok, "{}", last_error());
    assert!(next.position[0] > 0.0 && next.velocity[0] > 0.0);
    assert_eq!(next.goal, state.goal);
    unsafe { cp_planner_free(p) };
}

#[test]
fn plan_respects_a_teammate_parked_on_the_path() {
    let p = planner();
    let n = unsafe { cp_planner_horizon(p) };
    let state = CpRobotState {
        position: [0.0, 0.0, 1.0],
        velocity: [1.0, 0.0, 0.0],
        goal: [3.0, 0.0, 1.0],
        radius: 0.3,
    };
    let parked: Vec<f64> = (0..n).flat_map(|_| [1.0, 0.0, 1.0]).collect();
    let mut positions = vec![0.0; n * 3];
    let mut input = [0.0; 3];
    let status = unsafe { cp_planner_plan(p, &state, parked.as_ptr(), 1, positions.as_mut_ptr(), input.as_mut_ptr()) };
    assert_eq!(status, CpStatus::Ok, "{}", last_error());
    for c in positions.chunks_exact(3) {
        let d = ((c[0] - 1.0).powi(2) + c[1].powi(2) + (c[2] - 1.0).powi(2)).sqrt();
        assert!(d >= 0.6 - 1e-3, "planned point {c:?} is {d} m from the teammate");
    }
    unsafe { cp_planner_free(p) };
}

#[test]
fn episode_summaries_match_the_library_evaluation() {
    let cfg = RunConfig::from_toml_str(DEFAULT_CONFIG_TOML).unwrap();
    for (policy_text, policy) in [("full", PolicyKind::FullComm), ("dist:2", PolicyKind::DistanceBased { epsilon: 2.0 })] {
        let expected = evaluate(&cfg, &policy, ScenarioKind::AsymmetricSwapping, 3).unwrap();
        let sim = simulation(policy_text);
        for (episode, row) in expected.iter().enumerate() {
            let mut summary = CpEpisodeSummary {
                steps: 0,
                collisions: 0,
                comm_requests: 0,
                collided: -1,
                total_reward: 0.0,
                min_separation: 0.0,
                mean_time_to_goal: 0.0,
            };
            let status = unsafe { cp_simulation_run_episode(sim, CP_SCENARIO_ASYM, episode as u64, &mut summary) };
            assert_eq!(status, CpStatus::Ok, "{}", last_error());
            assert_eq!(summary.steps as usize, row.steps);
            assert_eq!(summary.collisions as usize, row.collisions);
            assert_eq!(summary.comm_requests as usize, row.comm_requests);
            assert_eq!(summary.collided, i32::from(row.collisions > 0));
            match row.mean_time_to_goal {
                Some(t) => assert_eq!(summary.mean_time_to_goal, t),
                None => assert!(summary.mean_time_to_goal.is_nan()),
            }
        }
        unsafe { cp_simulation_free(sim) };
    }
}

#[test]
fn seed_changes_the_spawns() {
    let sim = simulation("none");
    let run = |sim| {
        let mut s = CpEpisodeSummary {
            steps: 0,
            collisions: 0,
            comm_requests: 0,
            collided: 0,
            total_reward: 0.0,
            min_separation: 0.0,
            mean_time_to_goal: 0.0,
        };
        assert_eq!(unsafe { cp_simulation_run_episode(sim, CP_SCENARIO_RANDOM, 0, &mut s) }, CpStatus::Ok);
        s
    };
    let a = run(sim);
    assert_eq!(run(sim), a, "same seed, same episode");
    assert_eq!(unsafe { cp_simulation_set_seed(sim, 12345) }, CpStatus::Ok);
    assert_ne!(run(sim).total_reward, a.total_reward);
    unsafe { cp_simulation_free(sim) };
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut p = ptr::null_mut();
    let bad = CString::new("seed = \"seven\"").unwrap();
    assert_eq!(unsafe { cp_planner_new(bad.as_ptr(), &mut p) }, CpStatus::Config);
    assert!(p.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { cp_planner_new(ptr::null(), ptr::null_mut()) }, CpStatus::NullPointer);
    assert!(last_error().contains("null"), "{}", last_error());

    let sim = simulation("full");
    let spec = CString::new("sometimes").unwrap();
    assert_eq!(unsafe { cp_simulation_set_policy(sim, spec.as_ptr()) }, CpStatus::Policy);
    let missing = CString::new("learned:/nonexistent/team.ckpt").unwrap();
    let status = unsafe { cp_simulation_set_policy(sim, missing.as_ptr()) };
    assert!(matches!(status, CpStatus::Io | CpStatus::Checkpoint), "{status:?}");
    assert!(last_error().contains("team.ckpt"), "{}", last_error());

    let mut summary = std::mem::MaybeUninit::<CpEpisodeSummary>::uninit();
    assert_eq!(
        unsafe { cp_simulation_run_episode(sim, 7, 0, summary.as_mut_ptr()) },
        CpStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { cp_simulation_run_episode(ptr::null_mut(), 0, 0, summary.as_mut_ptr()) },
        CpStatus::NullPointer
    );
    unsafe { cp_simulation_free(sim) };

    let p = planner();
    let state = CpRobotState {
        position: [0.0; 3],
        velocity: [f64::NAN, 0.0, 0.0],
        goal: [1.0, 0.0, 1.0],
        radius: 0.3,
    };
    let mut next = state;
    let input = [0.0; 3];
    assert_eq!(unsafe { cp_planner_step(p, &state, input.as_ptr(), &mut next) }, CpStatus::Dynamics);
    assert_eq!(unsafe { cp_planner_horizon(ptr::null()) }, 0);
    unsafe {
        cp_planner_free(p);
        cp_planner_free(ptr::null_mut());
        cp_simulation_free(ptr::null_mut());
    }
}

#[test]
fn generated_header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/commplan.h")).unwrap();
    for symbol in [
        "cp_version",
        "cp_default_config",
        "cp_last_error_message",
        "cp_planner_new",
        "cp_planner_free",
        "cp_planner_horizon",
        "cp_planner_plan",
        "cp_planner_step",
        "cp_simulation_new",
        "cp_simulation_free",
        "cp_simulation_set_seed",
        "cp_simulation_set_policy",
        "cp_simulation_run_episode",
        "typedef struct CpPlanner CpPlanner",
        "CP_STATUS_NULL_POINTER",
        "CP_SCENARIO_ASYM",
    ] {
        assert!(header.contains(symbol), "header lacks {symbol}");
    }
}
