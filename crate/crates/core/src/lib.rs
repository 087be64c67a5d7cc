//! Communication-aware multi-robot motion planning.
//!
//! Robots are double integrators that each solve a receding-horizon
//! trajectory optimisation against assumed trajectories of their teammates.
//! A teammate's assumed trajectory is either its freshly requested plan or a
//! constant-velocity prediction from its observed state; deciding whom to ask
//! is the job of the communication policies in [`comms`], one of which is
//! learned with multi-agent actor-critic training ([`maddpg`]).

pub mod checkpoint;
pub mod cli;
pub mod comms;
pub mod config;
pub mod env;
pub mod error;
pub mod experiment;
pub mod io;
pub mod maddpg;
pub mod neural;
pub mod planner;
pub mod prediction;
pub mod qp;
pub mod seeding;
pub mod selfcheck;
pub mod world;

pub use error::{Error, Result};
