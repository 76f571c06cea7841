pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod features;
pub mod inventory;
pub mod models;
pub mod nn;
pub mod optim;
pub mod perceptual;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
