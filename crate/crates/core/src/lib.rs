//! Semi-supervised, transductive user geolocation from a text view and an
//! @-mention graph view.
//!
//! The crate provides graph-convolutional models with highway gates, a
//! label-feedback GCN variant, a concatenation MLP and a deep CCA pipeline,
//! together with k-d tree discretisation of coordinates into classes,
//! great-circle evaluation and an experiment harness.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geo;
pub mod harness;
pub mod models;
pub mod tensor;
pub mod views;

pub use error::{Error, Result};

pub use geo::{evaluate, haversine_km, EvalReport, GeoPoint, RegionTree};
pub use tensor::{DenseMatrix, ParamSet, SparseMatrix};
pub use views::{ViewConfig, ViewMatrices, Vocabulary};
