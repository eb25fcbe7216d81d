//! Quantifying split damage in images of canned dry beans.
//!
//! The crate is organised along the processing chain:
//!
//! 1. [`imagecore`] – raster types, binary PPM/PGM codec, HSV conversion.
//! 2. [`dataset`] – study manifest, dihedral augmentation, padding.
//! 3. [`segnet`] – pyramid segmentation network, exact gradients, AdaDelta
//!    training, `BSWT` weight files.
//! 4. [`measures`] – Bean Split Ratio, split components, Bean Split Histogram,
//!    1-D earth mover's distance.
//! 5. [`eval`] – AP, IoU, BSR error, threshold calibration, LDA baseline.
//! 6. [`stats`] – correlation, two-way ANOVA, variance components,
//!    heritability.
//! 7. [`pipeline`] – the composition used by the command-line tool.
//!
//! [`synthetic`] generates labeled bean images for tests and demos.

pub mod dataset;
pub mod eval;
pub mod imagecore;
pub mod measures;
pub mod pipeline;
pub mod segnet;
pub mod stats;
pub mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Image(#[from] imagecore::ImageError),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Net(#[from] segnet::NetError),
    #[error(transparent)]
    Measure(#[from] measures::MeasureError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
