//! Estimators of a population mean when the outcome is missing at random.

pub mod bart;
pub mod data;
pub mod error;
pub mod estimators;
pub mod io;
pub mod linalg;
pub mod rng;
pub mod sim;
pub mod spline;
pub mod uncertainty;

pub use data::{Dataset, Design, Term};
pub use error::{Error, Result};
