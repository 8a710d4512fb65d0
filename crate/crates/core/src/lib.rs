pub mod autograd;
pub mod config;
pub mod corpus;
pub mod ds_graph;
pub mod error;
pub mod generator;
pub mod harness;
pub mod instruct;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod ocf;
pub mod oica;
pub mod organ;
pub mod params;
pub mod tensor;
pub mod vision;

pub use error::{OridError, Result};
