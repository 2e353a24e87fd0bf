//! Contextual ad selection backed by a linear click-through-rate model.
//!
//! The pipeline runs from impression logs to a served ad:
//!
//! - [`logs`] parses event logs and aggregates them into training rows;
//! - [`keywords`] maps page keywords to numeric values via co-occurrence clustering;
//! - [`features`] encodes rows into a design matrix and standardizes it;
//! - [`regression`] fits the model by gradient descent or the normal equation;
//! - [`evaluation`] scores a model on held-out data;
//! - [`server`] picks an ad for a request by bid or by predicted CTR.

pub mod catalog;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod fixtures;
pub mod keywords;
pub mod linalg;
pub mod logs;
pub mod regression;
pub mod server;
pub mod simulate;

pub use error::{Error, Result};
