//! Simulation and post-processing for phase-contrast imaging with correlated
//! photon pairs.
//!
//! One photon of each SPDC pair illuminates the sample and is imaged onto an
//! event camera; its partner is detected in the Fourier plane, which reveals
//! the illumination angle. Selecting pairs by their far-field position acts
//! as a condenser aperture applied after the fact, so asymmetric-illumination
//! and differential phase contrast (DPC) images can all be formed from one
//! recording.
//!
//! Stages, in pipeline order:
//!
//! - [`pairgen`]: photon-pair source
//! - [`sample`]: phase targets and the gradient kick
//! - [`optics`]: near-field and far-field mapping onto the camera
//! - [`detector`]: intensified event camera
//! - [`centroid`]: cluster collapse to single photons
//! - [`coinc`]: coincidence pairing
//! - [`aperture`]: digital Fourier-plane masks
//! - [`image`]: coincidence images, DPC, visibility
//! - [`store`]: binary event files
//!
//! Data-parallel loops run on rayon with the default `parallel` feature and
//! sequentially without it; results are identical either way.

pub mod aperture;
pub mod centroid;
pub mod coinc;
pub mod config;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod exec;
pub mod geom;
pub mod image;
pub mod optics;
pub mod pairgen;
pub mod payload;
pub mod pgm;
pub mod pipeline;
pub mod rng;
pub mod sample;
pub mod store;

pub use error::{Error, Result};
pub use geom::{Plane, Region, Vec2};
