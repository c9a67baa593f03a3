//! Learned single-patch noise estimator.
//!
//! Patches go through the Haar front end and the extractor `f` to a feature
//! `h`; the projector `g` maps `h` to the projection `z` used by the
//! contrastive loss, and the head maps `h` to a prediction in the weighted
//! regression space `r = (w₁·K, w₂·ln σ, w₃·μ_c, w₄·ln σ_r)`.
//!
//! Training runs in two stages: contrastive feature learning on triplets
//! (anchor and positive share a tuple but not a scene, the negative has a
//! fresh tuple), then joint training of the head with the regression loss
//! plus `tau_loss` times the contrastive loss.

mod checkpoint;
mod config;
mod eval;
mod loss;
mod network;
mod scenes;
mod train;

use rand::Rng;
use rayon::prelude::*;

pub use checkpoint::{EstimatorCheckpoint, NamedTensors, TrainingMetadata, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Activation, ConvStage, EstimatorConfig};
pub use eval::{baseline_mse, evaluate_triplets, mean_r_vector, HeldOutReport};
pub use loss::{
    batch_gradient, batch_loss, contrastive_loss, cosine, param_transform_r, param_transform_r_inverse,
    prediction_to_params, LossBreakdown, Objective, GAIN_FLOOR, SIGMA_FLOOR,
};
pub use network::{ForwardPass, Network, ParamGroups, TensorSpec};
pub use scenes::{procedural_pool, procedural_scene, virtual_camera_bank, SceneKind};
pub use train::{train, EpochLog, Trainer};

use crate::calibration::{sample_params, CameraModel};
use crate::error::{Error, Result};
use crate::noise::{synthesize_noise, NoiseParams, RawPatch};
use crate::rng::stream_rng;

/// One anchor/positive/negative example.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub anchor: RawPatch,
    pub positive: RawPatch,
    pub negative: RawPatch,
    pub anchor_params: NoiseParams,
    pub negative_params: NoiseParams,
    /// Index into the camera bank the anchor tuple was drawn from.
    pub anchor_camera: usize,
    pub negative_camera: usize,
}

/// Stacks of triplets; positive `i` shares anchor `i`'s tuple.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripletBatch {
    pub anchors: Vec<RawPatch>,
    pub positives: Vec<RawPatch>,
    pub negatives: Vec<RawPatch>,
    pub anchor_params: Vec<NoiseParams>,
    pub negative_params: Vec<NoiseParams>,
}

impl TripletBatch {
    pub fn from_triplets<'a>(triplets: impl IntoIterator<Item = &'a Triplet>) -> Self {
        let mut b = Self::default();
        for t in triplets {
            b.anchors.push(t.anchor.clone());
            b.positives.push(t.positive.clone());
            b.negatives.push(t.negative.clone());
            b.anchor_params.push(t.anchor_params);
            b.negative_params.push(t.negative_params);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.anchors.len();
        if n == 0 {
            return Err(Error::InsufficientData("triplet batch is empty".into()));
        }
        if [self.positives.len(), self.negatives.len(), self.anchor_params.len(), self.negative_params.len()]
            .iter()
            .any(|&m| m != n)
        {
            return Err(Error::Shape("triplet batch stacks have different sizes".into()));
        }
        Ok(())
    }
}

/// Synthesize one triplet from random scenes and cameras.
///
/// The negative tuple is redrawn until it differs from the anchor tuple.
pub fn augment_triplet<R: Rng + ?Sized>(scene_pool: &[RawPatch], camera_bank: &[CameraModel], rng: &mut R) -> Result<Triplet> {
    if scene_pool.is_empty() {
        return Err(Error::Config("scene pool is empty".into()));
    }
    if camera_bank.is_empty() {
        return Err(Error::Config("camera bank is empty".into()));
    }
    let anchor_camera = rng.random_range(0..camera_bank.len());
    let anchor_params = sample_params(&camera_bank[anchor_camera], rng)?;
    let scene_i = &scene_pool[rng.random_range(0..scene_pool.len())];
    let (anchor, _) = synthesize_noise(scene_i, &anchor_params, rng)?;
    let scene_k = &scene_pool[rng.random_range(0..scene_pool.len())];
    let (positive, _) = synthesize_noise(scene_k, &anchor_params, rng)?;
    let (negative_camera, negative_params) = redraw_distinct(camera_bank, &anchor_params, rng)?;
    let scene_j = &scene_pool[rng.random_range(0..scene_pool.len())];
    let (negative, _) = synthesize_noise(scene_j, &negative_params, rng)?;
    Ok(Triplet { anchor, positive, negative, anchor_params, negative_params, anchor_camera, negative_camera })
}

const MAX_REDRAWS: usize = 64;

fn redraw_distinct<R: Rng + ?Sized>(bank: &[CameraModel], anchor: &NoiseParams, rng: &mut R) -> Result<(usize, NoiseParams)> {
    for _ in 0..MAX_REDRAWS {
        let cam = rng.random_range(0..bank.len());
        let p = sample_params(&bank[cam], rng)?;
        if !p.bit_eq(anchor) {
            return Ok((cam, p));
        }
    }
    Err(Error::Config(
        "camera bank cannot produce a negative tuple distinct from the anchor".into(),
    ))
}

/// `count` triplets; triplet `i` draws from stream `i` of `seed`.
pub fn generate_triplets(scene_pool: &[RawPatch], camera_bank: &[CameraModel], count: usize, seed: u64) -> Result<Vec<Triplet>> {
    (0..count)
        .into_par_iter()
        .map(|i| augment_triplet(scene_pool, camera_bank, &mut stream_rng(seed, i as u64)))
        .collect()
}

/// Outputs of one inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub h: Vec<f64>,
    pub z: Vec<f64>,
    /// Raw head output in the regression space.
    pub r_hat: [f64; 4],
    /// `r_hat` mapped back to a tuple with floors applied.
    pub params: NoiseParams,
}

/// A checkpoint paired with its network, for repeated inference.
#[derive(Debug, Clone)]
pub struct Estimator {
    checkpoint: EstimatorCheckpoint,
    network: Network,
}

impl Estimator {
    pub fn new(checkpoint: EstimatorCheckpoint) -> Result<Self> {
        let network = Network::new(&checkpoint.config)?;
        checkpoint.params.check_layout(network.specs())?;
        Ok(Self { checkpoint, network })
    }

    pub fn checkpoint(&self) -> &EstimatorCheckpoint {
        &self.checkpoint
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn forward(&self, patch: &RawPatch) -> Result<Prediction> {
        let pass = self.network.forward(&self.checkpoint.params.values, patch, true)?;
        let r = pass.r_hat.as_ref().expect("head requested");
        let r_hat = [r[0], r[1], r[2], r[3]];
        Ok(Prediction {
            params: prediction_to_params(&r_hat, &self.checkpoint.config.param_weights),
            h: pass.h.to_vec(),
            z: pass.z.to_vec(),
            r_hat,
        })
    }

    pub fn estimate(&self, patch: &RawPatch) -> Result<NoiseParams> {
        self.forward(patch).map(|p| p.params)
    }
}

/// `h`, `z` and the predicted tuple for one patch.
pub fn forward(patch: &RawPatch, checkpoint: &EstimatorCheckpoint) -> Result<Prediction> {
    Estimator::new(checkpoint.clone())?.forward(patch)
}

pub fn estimate(patch: &RawPatch, checkpoint: &EstimatorCheckpoint) -> Result<NoiseParams> {
    forward(patch, checkpoint).map(|p| p.params)
}

/// Joint objective (mean weighted regression error plus `tau_loss` times the
/// contrastive loss) of a batch under a checkpoint's parameters.
pub fn total_loss(batch: &TripletBatch, checkpoint: &EstimatorCheckpoint, config: &EstimatorConfig) -> Result<LossBreakdown> {
    let net = Network::new(config)?;
    checkpoint.params.check_layout(net.specs())?;
    batch_loss(&net, &checkpoint.params.values, batch, config, Objective::Joint, config.tau_loss)
}

/// Gradient of [`total_loss`] with respect to every parameter tensor.
pub fn backward(batch: &TripletBatch, checkpoint: &EstimatorCheckpoint, config: &EstimatorConfig) -> Result<NamedTensors> {
    let net = Network::new(config)?;
    checkpoint.params.check_layout(net.specs())?;
    let (_, grads) = batch_gradient(&net, &checkpoint.params.values, batch, config, Objective::Joint, config.tau_loss)?;
    Ok(NamedTensors { specs: net.specs().to_vec(), values: grads })
}
