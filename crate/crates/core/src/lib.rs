pub mod alignment;
pub mod analysis;
pub mod cli;
pub mod error;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod optimizer;
pub mod simulation;
