//! Differentially private synthetic data with semantic-aware pretraining.
//!
//! The workflow privately queries which public semantics the sensitive data
//! resembles, pretrains a small generative model on the matching slice of the
//! public data, fine-tunes it on the sensitive data with DP-SGD, and accounts
//! for the whole run with Rényi DP.

pub mod accountant;
pub mod data;
mod binio;
pub mod dpcore;
pub mod error;
pub mod generative;
pub mod ledger;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod pipeline;
pub mod semantics;

pub use error::{Error, Result};
