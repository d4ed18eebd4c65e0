#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ancestry;
pub mod cdi;
pub mod coalescent;
pub mod error;
pub mod harness;
pub mod lookdown;
pub mod measure;
pub mod par;
pub mod persist;
pub mod quad;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use measure::{Density, LambdaMeasure, MergerRateTable};
