//! Datasets, model and scene files.

pub mod dataset;
pub mod synthetic;
pub mod model_file;
pub mod scene_file;

pub use model_file::{load_model, save_model, serialized_size};
pub use scene_file::load_scene;
