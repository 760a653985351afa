//! Random Forest explanations in proximity-distance space.
//!
//! Train a CART forest on binary feature vectors, freeze the training set's
//! leaf signatures in a [`proximity::ProximityStore`], then flip one bit at a
//! time to see how each feature moves an instance toward or away from its
//! decided class.

pub mod audit;
pub mod contribution;
pub mod dataset;
mod error;
pub mod forest;
pub mod proximity;
pub mod report;

pub use error::{Error, Result};
