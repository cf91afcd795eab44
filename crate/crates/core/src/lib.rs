pub mod camera;
pub mod checkpoint;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod groups;
pub mod hyper;
pub mod nn;
pub mod pretrain;
pub mod training;

pub use error::{Error, Result};
