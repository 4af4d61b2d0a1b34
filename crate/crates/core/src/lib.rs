//! Colour-from-focus simulation and analysis.
//!
//! Point sources are ray-cast through a graded-index ball lens and a binary
//! pupil onto concentric hemispherical retinas. Focal sweeps become intensity
//! stacks, which are turned into event streams and analysed for best-focus
//! position, FWHM and spectral resolving power.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod dispersion;
pub mod events;
pub mod geom;
pub mod pupil;
pub mod retina;
pub mod segment;
pub mod tracer;
