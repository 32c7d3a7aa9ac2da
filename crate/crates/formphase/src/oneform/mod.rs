//! Fitting and evaluating the phase 1-form on rectified coordinates.

mod basis;
mod isochron;
mod model;

pub use basis::{dr_pairing, dtheta_pairing, BasisIndex, BasisSpec, Trig};
pub use isochron::{isochrons, IsochronWindow, Polyline};
pub use model::{FitDiagnostics, FitOptions, FormPhaseModel, PrcSample, MODEL_SCHEMA_VERSION};
