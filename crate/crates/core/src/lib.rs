//! Distillation through the lens of variance reduction: estimators, teachers,
//! students and the experiments that compare them.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod numkit;
pub mod teachers;
pub mod trees;

pub use error::{DistError, Result};
