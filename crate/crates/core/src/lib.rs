//! Overlapping-element discretization of a stochastic cubic reaction-diffusion
//! equation on a periodic interval: coupled element operator and its spectrum,
//! Q-Wiener noise and its element projections, stochastic averaging of the
//! fast modes, reference and coupled solvers, discrete grid-value models, and
//! a Monte-Carlo harness.

pub mod averaging;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod harness;
pub mod models;
pub mod noise;
pub mod spectral;

pub use error::{Error, Result};
