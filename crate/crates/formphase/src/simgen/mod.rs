//! Synthetic oscillators with known phase: a contracting rotation core,
//! invertible distortion chains, and a Stratonovich integrator, so datasets
//! come with exact ground-truth labels.

mod chain;
mod floquet;
mod hmap;
mod oscillator;
mod sde;

pub use chain::{ChainLink, DiffeoChain};
pub use floquet::{random_orthogonal, unwind, wind, FloquetSystem};
pub use hmap::{AffineMap, HMap};
pub use oscillator::{
    build_oscillator, generate_dataset, generate_split, noise_matrix, GroundTruthOscillator,
    SimConfig,
};
pub use sde::{sde_integrate, sde_integrate_with_increments, SdePath};
