//! Robust contraction-based model predictive control for perturbed nonlinear
//! discrete-time systems.

pub mod cli;
pub mod config;
pub mod contraction;
pub mod controller;
pub mod error;
pub mod linalg;
pub mod model;
pub mod ocp;
pub mod optim;
pub mod oracles;
pub mod plants;
pub mod sets;
pub mod sim;
pub mod terminal;
pub mod tightening;

pub use error::{Error, Result};
pub use model::{BoxSet, Dynamics, PlantModel};
