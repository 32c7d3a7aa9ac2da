//! From raw measurements to estimator-ready samples: Kalman smoothing for
//! velocities, principal-axis z-scoring, and the spike-train filter-bank
//! embedding with relative-phase output.

mod filterbank;
mod kalman;
mod scale;

pub use filterbank::{
    filter_bank_embed, lowpass2, lowpass2_coefficients, lowpass2_response, EmbeddedSignal,
    FilterBankConfig,
};
pub use kalman::{kalman_smooth, log_likelihood, smooth_with, KalmanSmoothed, SmootherConfig};
pub use scale::{relative_phase, zscore_pcs, PcScaling};
