//! Raw sensor noise modelling: a fine-grained synthesizer with shot, row and
//! color-biased read components, per-camera calibration of the parameter
//! space, a photon-transfer oracle, a contrastively trained single-patch
//! estimator, and histogram KL scoring.

pub mod calibration;
pub mod error;
pub mod estimator;
pub mod features;
pub mod io;
pub mod metrics;
pub mod noise;
pub mod oracle;
pub mod rng;

pub use calibration::{fit_log_linear, sample_params, sample_params_at_iso, CameraModel, ParamSet};
pub use error::{Error, Result};
pub use estimator::{Estimator, EstimatorCheckpoint, EstimatorConfig};
pub use features::{haar_dwt2, haar_idwt2, Subbands};
pub use metrics::{kl_divergence, score_kl, KlReport};
pub use noise::{synthesize_noise, NoiseParams, NoiseSample, RawPatch};
pub use oracle::{estimate_params_oracle, FlatLevel};
