//! Phase estimation for noisy, partially observed oscillators.
//!
//! The central object is a closed differential 1-form fitted to state and
//! velocity samples so that its pairing with the vector field is constant;
//! integrating it assigns every state a phase that advances uniformly in
//! time. The crate also ships the supporting machinery: limit-cycle
//! rectification, a ground-truth oscillator generator built from conjugated
//! normal forms, baseline estimators, evaluation harnesses, and preprocessing
//! (Kalman smoothing and a filter-bank embedding for scalar recordings).

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod numeric;
pub mod oneform;
pub mod preprocess;
pub mod rectify;
pub mod simgen;

pub use dataset::{Segment, TimeSeriesDataset};
pub use error::{Error, Result};
pub use oneform::{BasisSpec, FitOptions, FormPhaseModel};
pub use rectify::{CycleFitOptions, FourierSeries, RectificationMap};
pub use simgen::{GroundTruthOscillator, SimConfig};
