//! Policy mirror descent for finite discounted MDPs with convex regularizers.

pub mod error;
pub mod estimators;
pub mod generate;
pub mod linalg;
pub mod mdp;
pub mod oracle;
pub mod prox;
pub mod regularizer;
pub mod schedule;
pub mod solvers;
pub mod theorems;

pub use error::{PmdError, Result};
