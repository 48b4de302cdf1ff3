#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupling;
pub mod error;
pub mod experiment;
pub mod replicas;
pub mod rng;
pub mod she;
pub mod stats;
pub mod wasep;

pub use error::{Error, Result};
