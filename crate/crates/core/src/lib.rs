//! Radiance fields stored as hybrid tensor rank decompositions.

pub mod compose;
pub mod cli;
pub mod compress;
pub mod error;
pub mod field;
pub mod io;
pub mod model;
pub mod real;
pub mod render;
pub mod shading;
pub mod train;

pub use error::{Error, Result};
pub use field::{Aabb, DecomposedField, Keep, RankCount, RankLayout};
pub use model::FieldPair;
pub use real::Real;
