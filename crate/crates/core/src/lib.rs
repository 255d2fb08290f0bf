pub mod augment;
pub mod bench;
pub mod dataset;
pub mod dgm;
pub mod error;
pub mod grid;
pub mod inpaint;
pub mod metrics;
pub mod raycast;
pub mod sampler;
pub mod seed;
pub mod terrain;

pub use error::{Error, Result};
