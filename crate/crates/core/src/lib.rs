//! Holistic temporal grounding of event queries in frame sequences.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grounding;
pub mod io;
pub mod metrics;
pub mod segmenter;
pub mod temporal;
pub mod trainer;

pub use error::{Error, Result};
