//! Constrained primal-dual policy optimization on finite Text2SQL task suites.
//!
//! The crate is organized bottom-up:
//!
//! - [`policy`]: prompt/response spaces, tabular softmax policies, KL.
//! - [`scoring`]: the execution-match reward and five indicator constraints.
//! - [`tasks`]: synthetic task suites and their on-disk format.
//! - [`objective`]: exact expectations, the Lagrangian and its gradient.
//! - [`trainer`]: alternating GRPO primal steps and projected dual steps.
//! - [`oracle`]: tilted policies, the dual function, primal solvers and
//!   duality-gap certificates.

pub mod error;
pub mod policy;
pub mod scoring;
pub mod tasks;
pub mod objective;
pub mod oracle;
pub mod trainer;

pub use error::{Error, Result};
