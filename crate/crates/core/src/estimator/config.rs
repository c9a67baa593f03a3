use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::PLANES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu,
    Tanh,
}

impl Activation {
    pub const LEAK: f64 = 0.01;

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    Self::LEAK * x
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative at pre-activation `x` (right derivative at 0 for the ReLU family).
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => f64::from(u8::from(x > 0.0)),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    Self::LEAK
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    /// Gain used by the fan-in scaled initializer.
    pub fn init_gain(self) -> f64 {
        match self {
            Activation::Relu | Activation::LeakyRelu => std::f64::consts::SQRT_2,
            _ => 1.0,
        }
    }
}

/// One convolution stage of the extractor. Padding is `kernel / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStage {
    pub kernel: usize,
    pub stride: usize,
    pub width: usize,
    pub activation: Activation,
}

/// Network topology, loss settings and the training schedule.
///
/// `feature_dim` must equal twice the last extractor width: the extractor
/// ends in per-channel mean and standard-deviation pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Packed patch height (per CFA plane).
    pub patch_height: usize,
    /// Packed patch width (per CFA plane).
    pub patch_width: usize,
    /// Multiplier applied to the Haar planes before the first convolution.
    pub input_scale: f64,
    /// Extra multipliers for the `(LL, LH, HL, HH)` bands of every CFA plane.
    #[serde(default = "unit_bands")]
    pub band_weights: [f64; 4],
    pub extractor: Vec<ConvStage>,
    pub feature_dim: usize,
    /// Projector layer widths; the last one is the projection size.
    pub projector: Vec<usize>,
    /// Prediction head layer widths; the last one must be 4.
    pub head: Vec<usize>,
    /// Activation between dense layers (the last dense layer is linear).
    pub mlp_activation: Activation,
    /// Softmax temperature of the contrastive loss.
    pub temperature: f64,
    /// Weight of the contrastive term in the joint loss.
    pub tau_loss: f64,
    /// Weights of `(K, ln σ, μ_c, ln σ_r)` in the regression space.
    pub param_weights: [f64; 4],
    pub learning_rate: f64,
    /// Adam first-moment coefficient.
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// The step size is multiplied by `decay_factor` every `decay_epochs` epochs.
    pub decay_epochs: usize,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    /// Number of training triplets synthesized once before training.
    pub train_triplets: usize,
    /// Number of procedural clean scenes in the training pool.
    pub scene_pool_size: usize,
    /// Upper bound of procedural scene values, DN.
    pub white_level: f64,
    /// Keep the projector fixed during the joint stage.
    #[serde(default)]
    pub freeze_projector_stage2: bool,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    /// Full-scale settings: 4×64×64 patches, a 16/32/64 extractor with
    /// `|h| = 128`, batch 32, step 1e-4 divided by 10 every 50 epochs.
    fn default() -> Self {
        let stage = |width| ConvStage { kernel: 3, stride: 2, width, activation: Activation::Relu };
        Self {
            patch_height: 64,
            patch_width: 64,
            input_scale: 1.0 / 64.0,
            band_weights: unit_bands(),
            extractor: vec![stage(16), stage(32), stage(64)],
            feature_dim: 128,
            projector: vec![64, 32],
            head: vec![64, 4],
            mlp_activation: Activation::Relu,
            temperature: 0.1,
            tau_loss: 0.1,
            param_weights: [1.0, 1.0, 10.0, 10.0],
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            decay_epochs: 50,
            decay_factor: 0.1,
            batch_size: 32,
            stage1_epochs: 200,
            stage2_epochs: 200,
            train_triplets: 20_000,
            scene_pool_size: 512,
            white_level: 1023.0,
            freeze_projector_stage2: false,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    /// Desk-scale settings for 4×32×32 patches (about 12k parameters) that
    /// train in minutes on one core.
    ///
    /// The LL band is damped because scene structure otherwise dominates the
    /// pooled statistics, and the scene pool is large so that the fixed
    /// triplet set does not let the network memorize scenes.
    pub fn toy() -> Self {
        let stage = |stride, width| ConvStage { kernel: 3, stride, width, activation: Activation::Relu };
        Self {
            patch_height: 32,
            patch_width: 32,
            extractor: vec![stage(1, 8), stage(2, 16), stage(2, 32)],
            feature_dim: 64,
            band_weights: [0.125, 1.0, 1.0, 1.0],
            projector: vec![32, 16],
            head: vec![32, 4],
            learning_rate: 3e-3,
            decay_epochs: 20,
            stage1_epochs: 30,
            stage2_epochs: 30,
            train_triplets: 2000,
            scene_pool_size: 2000,
            ..Self::default()
        }
    }
}

fn unit_bands() -> [f64; 4] {
    [1.0; 4]
}

fn cfg(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl EstimatorConfig {
    pub fn input_planes(&self) -> usize {
        PLANES
    }

    pub fn projection_dim(&self) -> usize {
        *self.projector.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_height == 0 || self.patch_width == 0 || self.patch_height % 2 != 0 || self.patch_width % 2 != 0 {
            return Err(cfg(format!(
                "patch dimensions must be even and positive, got {}x{}",
                self.patch_height, self.patch_width
            )));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(cfg("input_scale must be positive"));
        }
        if self.band_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(cfg("band_weights must be finite and non-negative"));
        }
        if self.extractor.is_empty() {
            return Err(cfg("extractor needs at least one stage"));
        }
        for (i, s) in self.extractor.iter().enumerate() {
            if s.kernel == 0 || s.stride == 0 || s.width == 0 {
                return Err(cfg(format!("extractor stage {i} has a zero kernel, stride or width")));
            }
        }
        let last = self.extractor.last().unwrap().width;
        if self.feature_dim != 2 * last {
            return Err(cfg(format!(
                "feature_dim must be twice the last extractor width ({}), got {}",
                2 * last,
                self.feature_dim
            )));
        }
        if self.projector.is_empty() || self.projector.contains(&0) {
            return Err(cfg("projector widths must be non-empty and positive"));
        }
        if self.head.last() != Some(&4) || self.head.contains(&0) {
            return Err(cfg("head widths must be positive and end in 4"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(cfg("temperature must be positive"));
        }
        if !(self.tau_loss > 0.0 && self.tau_loss.is_finite()) {
            return Err(cfg("tau_loss must be positive"));
        }
        if self.param_weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(cfg("param_weights must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(cfg("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_epsilon > 0.0) {
            return Err(cfg("Adam coefficients must lie in [0, 1) with a positive epsilon"));
        }
        if self.decay_epochs == 0 || !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(cfg("decay_epochs must be positive and decay_factor in (0, 1]"));
        }
        if self.batch_size < 2 {
            return Err(cfg(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if self.train_triplets < 2 || self.scene_pool_size == 0 {
            return Err(cfg("train_triplets must be at least 2 and scene_pool_size positive"));
        }
        if !(self.white_level > 0.0 && self.white_level.is_finite()) {
            return Err(cfg("white_level must be positive"));
        }
        Ok(())
    }

    /// Step size in effect during `epoch` (0-based within a stage).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi((epoch / self.decay_epochs) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        let c = EstimatorConfig::default();
        c.validate().unwrap();
        assert_eq!(c.param_weights, [1.0, 1.0, 10.0, 10.0]);
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.beta1, 0.9);
    }

    #[test]
    fn schedule_divides_by_ten() {
        let c = EstimatorConfig::default();
        assert_eq!(c.learning_rate_at(0), 1e-4);
        assert_eq!(c.learning_rate_at(49), 1e-4);
        assert!((c.learning_rate_at(50) - 1e-5).abs() < 1e-20);
        assert!((c.learning_rate_at(120) - 1e-6).abs() < 1e-20);
    }

    #[test]
    fn invalid_configs() {
        let base = EstimatorConfig::default();
        let mut c = base.clone();
        c.batch_size = 1;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.temperature = 0.0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.feature_dim = 64;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.head = vec![64, 3];
        assert!(c.validate().is_err());
        let mut c = base;
        c.patch_width = 63;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_round_trip_and_strictness() {
        let c = EstimatorConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"activation\":\"relu\""));
        assert_eq!(serde_json::from_str::<EstimatorConfig>(&text).unwrap(), c);
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["unexpected"] = serde_json::json!(1);
        assert!(serde_json::from_value::<EstimatorConfig>(v).is_err());
    }

    #[test]
    fn activation_derivatives_match_differences() {
        for act in [Activation::Identity, Activation::Relu, Activation::LeakyRelu, Activation::Tanh] {
            for &x in &[-2.0, -0.3, 0.4, 1.7] {
                let h = 1e-6;
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-8, "{act:?} at {x}");
            }
        }
    }
}
