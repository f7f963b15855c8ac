//! Distributed graph filtering under dithered quantization and random link failures.
//!
//! The crate runs FIR and ARMA graph filters whose node-to-node messages pass
//! through a subtractively dithered uniform quantizer, over static graphs or
//! graphs whose links fail at random. It evaluates closed-form quantization
//! MSE expressions and bounds, checks them by Monte Carlo, and designs filter
//! coefficients that trade approximation accuracy against quantization error.

pub mod analysis;
pub mod design;
pub mod error;
pub mod experiments;
pub mod filters;
pub mod graphs;
pub mod linalg;
pub mod optim;
pub mod quantization;

pub use error::{Error, Result};
