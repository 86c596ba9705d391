//! Lifestyle-deficit prediction and recommendation toolkit.
//!
//! * [`synthgen`] draws synthetic user-days from fixed per-feature distributions.
//! * [`sensorsim`] turns accelerometer traces into step, distance and sleep totals.
//! * [`features`] engineers model inputs and signed deficit labels.
//! * [`mlp`] is a small dense network with Adam, early stopping and checkpoints.
//! * [`fedsim`] fine-tunes a pre-trained network across simulated clients
//!   with FedAvg or FedPer.
//! * [`recommender`] scores risks from predicted deficits and picks messages.
//! * [`metrics`], [`report`] and [`config`] cover evaluation and experiment setup.
//!
//! Every random draw goes through [`seed`], so a master seed fixes all output.

pub mod config;
pub mod error;
pub mod features;
pub mod fedsim;
pub mod metrics;
pub mod mlp;
pub mod pipeline;
pub mod recommender;
pub mod report;
pub mod seed;
pub mod sensorsim;
pub mod synthgen;

pub use error::{Error, Result};
