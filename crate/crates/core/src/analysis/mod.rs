//! Channel centralization metrics, the multi-scale mismatch bound and
//! linear-mixer optimality under a Gaussian model.

mod centralization;
pub mod linalg;
mod mismatch;
mod mixer;

pub use centralization::{centralization, covariance, dic, sci, transition_moment, CentralizationReport};
pub use mismatch::{scale_mismatch, worst_case_mismatch};
pub use mixer::{
    mixer_mi, mixer_mi_output_noise, noise_suppression_bound, optimal_mixer, random_orthonormal, random_psd,
    whitened_mixer, MixerProblem,
    NoiseSuppression, OptimalMixer,
};
