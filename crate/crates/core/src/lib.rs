//! Full-coverage gap filling of daily aerosol optical depth (AOD) rasters.
//!
//! The crate combines a nodata-aware window mean, which turns sparse AOD
//! retrievals into a neighbor-average predictor, with from-scratch random
//! forest regression on meteorological, terrain, smoke and calendar features.
//! Two model variants (with and without the neighbor-mean features) are
//! trained per band, evaluated under random, spatial and temporal
//! cross-validation, and layered into a mosaic that covers every pixel.
//!
//! Module map:
//! - [`grid`] and [`ascii`]: rasters with explicit validity and their file format
//! - [`features`]: encodings, smoke rasterization, station sample tables
//! - [`forest`]: CART trees, bagged forests, random hyperparameter search
//! - [`validation`]: fold plans, metrics, cross-validation reports
//! - [`synth`]: deterministic synthetic scenes with known truth
//! - [`pipeline`]: end-to-end orchestration over a directory of daily inputs

pub mod ascii;
pub mod error;
pub mod features;
pub mod forest;
pub mod grid;
pub mod matrix;
pub mod pipeline;
pub mod synth;
pub mod validation;

pub use error::{Error, Result};
pub use grid::{Grid, GridGeometry};
pub use matrix::Matrix;
