// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod band;
pub mod cli;
pub mod compare;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod draws;
pub mod error;
pub mod forecast;
pub mod montecarlo;
pub mod parallel;
pub mod priors;
pub mod rng;
pub mod sampler;
pub mod sv;

pub use error::{Error, ErrorClass, Result};
