pub mod bounds;
pub mod cli;
pub mod compare;
pub mod error;
pub mod gibbs;
pub mod instance;
pub mod model;
pub mod posterior_opt;
pub mod processes;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
