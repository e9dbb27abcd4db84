pub mod commuting;
pub mod compound;
pub mod em;
pub mod error;
pub mod genab0;
pub mod io;
pub mod linalg;
pub mod phpoisson;
pub mod simulate;

#[cfg(test)]
mod fixtures;

pub use error::{Error, Result};
pub use linalg::Matrix;
