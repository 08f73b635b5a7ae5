pub mod error;
pub mod math;

pub use error::{Error, Result};
pub mod checkpoint;
pub mod dara;
pub mod data;
pub mod dynamics;
pub mod env;
pub mod eval;
pub mod policy;
