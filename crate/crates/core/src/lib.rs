//! Data-poisoning attacks and defenses for linear regression.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`]: datasets, CSV ingestion, normalization, splits and synthetic data.
//! * [`regress`]: OLS / Ridge / LASSO / Elastic-net trainers, loss and MSE.
//! * [`attack`]: the dispersion objective, KKT Jacobians, the Nopt attack and the Opt baseline.
//! * [`defend`]: the Proda subset-sampling defense, the TRIM baseline and the complexity estimator.
//! * [`harness`]: seeded experiment cells, sweeps, aggregation and result files.
//! * [`plot`]: static SVG charts with companion CSVs.
//!
//! Data-parallel loops (Proda group trials, sweep cells) run on rayon when the
//! `parallel` feature is enabled and fall back to plain iterators otherwise; see [`exec`].
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod data;
pub mod defend;
pub mod error;
pub mod exec;
pub mod harness;
pub mod plot;
pub mod regress;
pub mod seed;

pub use error::{Error, Result};
