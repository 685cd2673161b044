pub mod audit;
pub mod cli;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod integrate;
pub mod systems;

pub use error::{Error, Result};
