//! Private selection from a list of candidate losses using only noisy
//! Gaussian answers to sensitivity-one queries.
//!
//! The crate is `no_std` (with `alloc`). Candidates are indices `0..n`
//! into a [`LossInstance`]; mechanisms never read the losses directly but
//! send [`LossExpr`] queries through a [`QueryChannel`], normally a
//! [`BudgetOracle`] that enforces the zCDP budget and logs every round.
#![no_std]

extern crate alloc;

pub mod error;
pub mod expr;
pub mod ext_real;
pub mod formulas;
pub mod instance;
pub mod mechanisms;
pub mod oracle;
pub mod params;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
pub use expr::LossExpr;
pub use ext_real::ExtReal;
pub use instance::{generate_instance, InstanceFamily, LossInstance};
pub use mechanisms::{Mechanism, SelectionResult};
pub use oracle::{BudgetOracle, QueryChannel, QueryRecord};
pub use params::{MechanismConstants, PrivacyParams};
