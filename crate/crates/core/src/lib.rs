//! Type-class prediction for identifiers of dynamically typed programs.
//!
//! The pipeline reads ASTs in a JSON wire format ([`ast`]), links every
//! identifier occurrence to a shared sink node and bounds fan-out
//! ([`transforms`]), then runs an inside-outside recursive network over the
//! resulting DAG ([`iornn`]) and classifies each sink into one of 21 builtin
//! type classes. [`training`] holds the optimizer, the trainer and the
//! evaluation harness.

pub mod ast;
pub mod autodiff;
pub mod error;
pub mod fixtures;
pub mod iornn;
pub mod synthetic;
pub mod training;
pub mod transforms;

pub use error::{Error, Result};
