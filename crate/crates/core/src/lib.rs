//! Chlorophyll-a estimation from hyperspectral water reflectance.
//!
//! The pipeline clips fine spectrometer spectra to 400–900 nm, screens
//! measurement windows for outliers, aggregates to 4/8/12/20 nm bands
//! (optionally differentiated), pairs spectra with photometer references, and
//! fits extremely randomized trees, an RBF epsilon-SVR and a one-hidden-layer
//! network tuned by repeated k-fold grid search. A synthetic bio-optical
//! generator stands in for field data.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod io;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod preprocess;
pub mod spectra;
pub mod synthgen;
pub mod tuning;
