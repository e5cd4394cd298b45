//! Multi-agent deep Q-learning for locating 15 skeletal landmarks in 3D volumes.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dqn;
pub mod error;
pub mod evaluation;
pub mod geom;
pub mod nn;
pub mod pose_graph;
pub mod reward;
pub mod rng;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
