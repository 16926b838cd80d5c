//! Grid-world benchmark for training decision-transformer agents with
//! hindsight and foresight language feedback.

pub mod config;
pub mod data;
pub mod embed;
pub mod env;
pub mod eval;
pub mod expert;
pub mod feedback;
pub mod model;
pub mod util;
