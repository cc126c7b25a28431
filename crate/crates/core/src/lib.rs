//! Differentiable simulation of phase-only diffractive optical networks whose
//! layers are parameterized by shifted L1 "wavelet" phase patterns, trained
//! with an expressway that accumulates every layer's field at the output plane.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod diffraction;
pub mod error;
pub mod field;
pub mod metrics;
pub mod network;
pub mod seed;
pub mod training;
pub mod wavelet;

pub use diffraction::{PropagationGeometry, RsKernel};
pub use error::{Error, Result};
pub use field::ComplexField;
pub use network::{Network, NetworkSpec};
pub use wavelet::{CircleMap, PhaseMode, WaveletLayer};
