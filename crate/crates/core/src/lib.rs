//! Distributed nonlinear filtering over sensor networks with kernel mean embeddings.
//!
//! Each sensor node holds a weighted particle set, embeds it in a reproducing kernel
//! Hilbert space, and fuses its neighbours' information by average consensus on a pair of
//! `m x m` / `m` terms. At full consensus every node reproduces the centralized update.
//!
//! ```no_run
//! use kme_filter::harness::{run_experiment, ExperimentOptions};
//! use kme_filter::scenarios::{load_bundled, Scenario};
//!
//! let scenario = Scenario::from_config(load_bundled("a2")?)?;
//! let exp = run_experiment(&scenario, ExperimentOptions { with_centralized: false, with_baseline: true })?;
//! println!("{}", exp.summary.methods["dnf"].aee_pos);
//! # Ok::<(), kme_filter::Error>(())
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod cnf;
pub mod consensus;
pub mod dnf;
pub mod embedding;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod scenarios;

pub use error::{Error, Result};
