pub mod bnb;
pub mod case_io;
pub mod conic;
pub mod cuts;
pub mod error;
pub mod feasibility;
pub mod formulation;
pub mod instance;
pub mod lagrangian;
pub mod nlp;
pub mod pipeline;
pub mod schedule;

pub use error::{Error, Result};
