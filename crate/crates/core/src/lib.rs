//! Shape-Newton identification of a material interface in a Poisson problem.

pub mod error;
pub mod config;
pub mod driver;
pub mod fem;
pub mod io;
pub mod mesh;
pub mod qp;
pub mod shape;
pub mod sparse;
pub mod verify;

pub use error::{Error, Result};
