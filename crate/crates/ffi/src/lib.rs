//! C ABI over the commplan planner and episode simulator.
//!
//! Objects are opaque handles created by `*_new` and released by `*_free`.
//! Every fallible call returns a [`CpStatus`]; on failure the message is
//! available from [`cp_last_error_message`] on the same thread until the
//! next failing call. Panics never cross the boundary; they surface as
//! [`CpStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;

use commplan::comms::PolicyKind;
use commplan::config::{PolicySpec, RunConfig, DEFAULT_CONFIG_TOML};
use commplan::env::{run_episode, ScenarioKind};
use commplan::experiment::{build_planner, resolve_policy, scenario_slot};
use commplan::planner::{Planner, Trajectory};
use commplan::seeding::evaluation_stream;
use commplan::world::{step_dynamics, ControlInput, RobotState, Vec3, WorldConfig};
use commplan::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Dynamics = 4,
    Policy = 5,
    Checkpoint = 6,
    Io = 7,
    Internal = 8,
}

/// Scenario codes accepted by [`cp_simulation_run_episode`].
pub const CP_SCENARIO_RANDOM: u32 = 0;
pub const CP_SCENARIO_SWAP: u32 = 1;
pub const CP_SCENARIO_ASYM: u32 = 2;

/// Robot state: position, velocity and goal in meters (per axis x, y, z)
/// and the collision radius.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpRobotState {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub goal: [f64; 3],
    pub radius: f64,
}

/// Outcome of one simulated episode.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpEpisodeSummary {
    pub steps: u64,
    /// Overlapping pairs at the terminating step (0 on timeout).
    pub collisions: u64,
    pub comm_requests: u64,
    /// 1 if the episode ended in a collision.
    pub collided: i32,
    pub total_reward: f64,
    pub min_separation: f64,
    /// Seconds, averaged over robots that reached their goal; NaN if none did.
    pub mean_time_to_goal: f64,
}

/// Opaque single-robot planner.
pub struct CpPlanner {
    planner: Planner,
    world: WorldConfig,
}

/// Opaque episode simulator bound to one configuration and policy.
pub struct CpSimulation {
    config: RunConfig,
    planner: Planner,
    policy: PolicyKind,
}

struct Failure {
    status: CpStatus,
    message: String,
}

impl Failure {
    fn new(status: CpStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn null(what: &str) -> Self {
        Self::new(CpStatus::NullPointer, format!("{what} is null"))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dynamics(_) => CpStatus::Dynamics,
            Error::Shape { .. } => CpStatus::InvalidArgument,
            Error::Policy(_) | Error::NonFiniteGradient(_) => CpStatus::Policy,
            Error::Spawn { .. } | Error::Config(_) => CpStatus::Config,
            Error::Checkpoint(_) => CpStatus::Checkpoint,
            Error::Io { .. } | Error::Csv(_) => CpStatus::Io,
        };
        Self::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let clean = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = clean);
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> CpStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => CpStatus::Ok,
        Ok(Err(f)) => {
            set_last_error(&f.message);
            f.status
        }
        Err(_) => {
            set_last_error("internal panic");
            CpStatus::Internal
        }
    }
}

/// # Safety
/// `ptr` is null or a NUL-terminated string.
unsafe fn opt_str<'a>(ptr: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if ptr.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map(Some)
        .map_err(|_| Failure::new(CpStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// # Safety
/// As [`opt_str`].
unsafe fn load_config(config_toml: *const c_char) -> Result<RunConfig, Failure> {
    let text = opt_str(config_toml, "configuration")?.unwrap_or(DEFAULT_CONFIG_TOML);
    Ok(RunConfig::from_toml_str(text)?)
}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl From<&CpRobotState> for RobotState {
    fn from(s: &CpRobotState) -> Self {
        RobotState {
            position: vec3(s.position),
            velocity: vec3(s.velocity),
            goal: vec3(s.goal),
            radius: s.radius,
        }
    }
}

impl From<&RobotState> for CpRobotState {
    fn from(s: &RobotState) -> Self {
        CpRobotState {
            position: s.position.into(),
            velocity: s.velocity.into(),
            goal: s.goal.into(),
            radius: s.radius,
        }
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cp_version() -> *const c_char {
    static VERSION: OnceLock<CString> = OnceLock::new();
    VERSION
        .get_or_init(|| CString::new(env!("CARGO_PKG_VERSION")).expect("no NUL"))
        .as_ptr()
}

/// The embedded default configuration (TOML), a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cp_default_config() -> *const c_char {
    static DEFAULT: OnceLock<CString> = OnceLock::new();
    DEFAULT
        .get_or_init(|| CString::new(DEFAULT_CONFIG_TOML).expect("no NUL"))
        .as_ptr()
}

/// Message of the most recent failure on this thread ("" if none). Valid
/// until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn cp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Create a planner from a TOML configuration (NULL for the default).
///
/// # Safety
/// `config_toml` is null or NUL-terminated; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cp_planner_new(config_toml: *const c_char, out: *mut *mut CpPlanner) -> CpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let cfg = load_config(config_toml)?;
        let planner = build_planner(&cfg)?;
        *out = Box::into_raw(Box::new(CpPlanner {
            planner,
            world: cfg.world,
        }));
        Ok(())
    })
}

/// Release a planner. Null is ignored.
///
/// # Safety
/// `planner` is null or came from [`cp_planner_new`] and is not used again.
#[no_mangle]
pub unsafe extern "C" fn cp_planner_free(planner: *mut CpPlanner) {
    if !planner.is_null() {
        drop(Box::from_raw(planner));
    }
}

/// Planning horizon N (0 for a null handle).
///
/// # Safety
/// `planner` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cp_planner_horizon(planner: *const CpPlanner) -> usize {
    planner.as_ref().map_or(0, |p| p.planner.horizon())
}

/// Plan for one robot against `n_others` assumed teammate trajectories.
///
/// `others` holds `n_others * N * 3` values: for each teammate, its
/// positions at steps 1..=N, x y z interleaved. On success
/// `out_positions` receives the `N * 3` planned positions and
/// `out_first_input` the 3 accelerations to execute now.
///
/// # Safety
/// Handles and pointers are valid for the stated lengths; `others` may be
/// null when `n_others` is 0.
#[no_mangle]
pub unsafe extern "C" fn cp_planner_plan(
    planner: *const CpPlanner,
    state: *const CpRobotState,
    others: *const f64,
    n_others: usize,
    out_positions: *mut f64,
    out_first_input: *mut f64,
) -> CpStatus {
    guard(|| {
        let p = planner.as_ref().ok_or_else(|| Failure::null("planner"))?;
        let state = state.as_ref().ok_or_else(|| Failure::null("state"))?;
        if out_positions.is_null() || out_first_input.is_null() {
            return Err(Failure::null("output buffer"));
        }
        if n_others > 0 && others.is_null() {
            return Err(Failure::null("others"));
        }
        let n = p.planner.horizon();
        let flat: &[f64] = if n_others == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(others, n_others * n * 3)
        };
        let teammates: Vec<Trajectory> = flat
            .chunks_exact(n * 3)
            .map(|t| Trajectory {
                start_step: 0,
                positions: t.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect(),
            })
            .collect();
        if teammates.iter().any(|t| !t.is_finite()) {
            return Err(Failure::new(CpStatus::InvalidArgument, "non-finite teammate position"));
        }
        let result = p.planner.plan(&RobotState::from(state), &teammates, None, 0)?;
        let positions = std::slice::from_raw_parts_mut(out_positions, n * 3);
        for (dst, src) in positions.chunks_exact_mut(3).zip(&result.trajectory.positions) {
            dst.copy_from_slice(src.as_slice());
        }
        std::slice::from_raw_parts_mut(out_first_input, 3).copy_from_slice(result.first_input.acceleration.as_slice());
        Ok(())
    })
}

/// Advance one robot by one time step under the planner's world limits.
///
/// # Safety
/// Pointers are valid; `input` holds 3 values.
#[no_mangle]
pub unsafe extern "C" fn cp_planner_step(
    planner: *const CpPlanner,
    state: *const CpRobotState,
    input: *const f64,
    out: *mut CpRobotState,
) -> CpStatus {
    guard(|| {
        let p = planner.as_ref().ok_or_else(|| Failure::null("planner"))?;
        let state = state.as_ref().ok_or_else(|| Failure::null("state"))?;
        let out = out.as_mut().ok_or_else(|| Failure::null("out"))?;
        if input.is_null() {
            return Err(Failure::null("input"));
        }
        let u = std::slice::from_raw_parts(input, 3);
        let w = &p.world;
        let next = step_dynamics(&RobotState::from(state), &ControlInput::new(u[0], u[1], u[2]), w.dt, w.v_max, w.u_max)?;
        *out = CpRobotState::from(&next);
        Ok(())
    })
}

/// Create a simulator from a TOML configuration (NULL for the default),
/// running full communication until a policy is set.
///
/// # Safety
/// `config_toml` is null or NUL-terminated; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cp_simulation_new(config_toml: *const c_char, out: *mut *mut CpSimulation) -> CpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let config = load_config(config_toml)?;
        let planner = build_planner(&config)?;
        *out = Box::into_raw(Box::new(CpSimulation {
            config,
            planner,
            policy: PolicyKind::FullComm,
        }));
        Ok(())
    })
}

/// Release a simulator. Null is ignored.
///
/// # Safety
/// `sim` is null or came from [`cp_simulation_new`] and is not used again.
#[no_mangle]
pub unsafe extern "C" fn cp_simulation_free(sim: *mut CpSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Replace the master seed.
///
/// # Safety
/// `sim` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cp_simulation_set_seed(sim: *mut CpSimulation, seed: u64) -> CpStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| Failure::null("simulation"))?;
        sim.config.seed = seed;
        Ok(())
    })
}

/// Select the communication policy: `full`, `none`, `dist:EPS` or
/// `learned:CHECKPOINT`.
///
/// # Safety
/// `sim` is a live handle; `policy` is NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cp_simulation_set_policy(sim: *mut CpSimulation, policy: *const c_char) -> CpStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| Failure::null("simulation"))?;
        let text = opt_str(policy, "policy")?.ok_or_else(|| Failure::null("policy"))?;
        let spec: PolicySpec = text
            .parse()
            .map_err(|e: Error| Failure::new(CpStatus::Policy, e.to_string()))?;
        sim.policy = resolve_policy(&spec, &sim.config)?;
        Ok(())
    })
}

/// Run evaluation episode `episode` of `scenario` (a `CP_SCENARIO_*`
/// code) without exploration. The same seed, scenario and episode give
/// the same spawns for every policy and match `commplan evaluate`.
///
/// # Safety
/// `sim` is a live handle; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cp_simulation_run_episode(
    sim: *mut CpSimulation,
    scenario: u32,
    episode: u64,
    out: *mut CpEpisodeSummary,
) -> CpStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| Failure::null("simulation"))?;
        let out = out.as_mut().ok_or_else(|| Failure::null("out"))?;
        let kind = *ScenarioKind::ALL
            .get(scenario as usize)
            .ok_or_else(|| Failure::new(CpStatus::InvalidArgument, format!("unknown scenario code {scenario}")))?;
        if episode >= 1 << 32 {
            return Err(Failure::new(CpStatus::InvalidArgument, "episode index must be below 2^32"));
        }
        let cfg = &sim.config;
        let mut rng = evaluation_stream(cfg.seed, scenario_slot(kind), episode);
        let mut controller = sim.policy.clone();
        let result = run_episode(&mut controller, &cfg.scenario(kind), &cfg.episode_config(), &sim.planner, &mut rng)?;
        *out = CpEpisodeSummary {
            steps: result.steps as u64,
            collisions: result.collisions as u64,
            comm_requests: result.comm_requests as u64,
            collided: i32::from(result.collided()),
            total_reward: result.total_reward,
            min_separation: result.min_separation,
            mean_time_to_goal: result.mean_time_to_goal(cfg.world.dt).unwrap_or(f64::NAN),
        };
        Ok(())
    })
}
