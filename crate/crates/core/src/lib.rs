pub mod error;
pub mod estimation;
pub mod geometry;
pub mod harness;
pub mod inlier_search;
pub mod nonlocal;
pub mod numerics;
pub mod theory;

pub use error::{Error, Result};
