#![no_std]
extern crate alloc;

pub mod cohort;
pub mod date;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod ingest;
pub mod nets;
pub mod segment;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
