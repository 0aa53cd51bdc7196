//! Frequency-space scene reconstruction for FMCW radar.
//!
//! The crate has two halves that share one signal formation model:
//!
//! * a brute-force simulator ([`scene`]) that renders raw range-FFT radar
//!   frames from analytic scenes, used both as a training-data generator and
//!   as ground truth for evaluation, and
//! * a learnable scene representation ([`field`]) — a multiresolution hash
//!   grid feeding small MLPs for occupancy and view-dependent reflectance —
//!   fitted directly to the raw frequency-domain measurements ([`train`]),
//!   with no volume rendering involved.
//!
//! Supporting modules provide the closed-form sensor math ([`radar`]), beam
//! cone super-sampling ([`sampling`]), an occupancy estimator and classic
//! log-odds grid mapping as a baseline ([`occupancy`]), metrics and dense
//! occupancy extraction ([`eval`]), and file formats plus the command line
//! pipeline ([`io`], [`cli`]).

pub mod cli;
pub mod demo;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod field;
pub mod geom;
pub mod io;
pub mod occupancy;
pub mod radar;
pub mod rng;
pub mod sampling;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
