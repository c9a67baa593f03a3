use std::ops::Range;

use rand::seq::SliceRandom;

use super::checkpoint::{EstimatorCheckpoint, NamedTensors, TrainingMetadata};
use super::config::EstimatorConfig;
use super::loss::{batch_gradient, LossBreakdown, Objective};
use super::network::Network;
use super::{generate_triplets, Triplet, TripletBatch};
use crate::calibration::CameraModel;
use crate::error::{Error, Result};
use crate::noise::RawPatch;
use crate::rng::{derive_seed, stream_rng};

const TRIPLET_TAG: u64 = 0x7419;
const SHUFFLE_TAG: u64 = 0x5a0f;

/// Mean losses over the batches of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub stage: u32,
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss: LossBreakdown,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], ranges: &[Range<usize>], lr: f64, c: &EstimatorConfig) {
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for i in ranges.iter().flat_map(|r| r.clone()) {
            let g = grads[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + c.adam_epsilon);
        }
    }
}

/// Two-stage optimizer state over a fixed, pre-synthesized triplet set.
pub struct Trainer {
    config: EstimatorConfig,
    network: Network,
    params: Vec<f64>,
    triplets: Vec<Triplet>,
    log: Vec<EpochLog>,
    stage: u32,
    stage_epochs: [usize; 2],
}

impl Trainer {
    /// Validates the configuration and synthesizes the training triplets.
    pub fn new(config: EstimatorConfig, scene_pool: &[RawPatch], camera_bank: &[CameraModel]) -> Result<Self> {
        let network = Network::new(&config)?;
        if scene_pool.is_empty() || camera_bank.is_empty() {
            return Err(Error::Config("scene pool and camera bank must be non-empty".into()));
        }
        if let Some(bad) = scene_pool.iter().find(|s| s.height() != config.patch_height || s.width() != config.patch_width) {
            return Err(Error::Config(format!(
                "scene shape {:?} does not match the configured {}x{} patch",
                bad.shape(),
                config.patch_height,
                config.patch_width
            )));
        }
        for cam in camera_bank {
            cam.validate()?;
        }
        let triplets =
            generate_triplets(scene_pool, camera_bank, config.train_triplets, derive_seed(config.seed, TRIPLET_TAG))?;
        let params = network.init_params(config.seed);
        Ok(Self { config, network, params, triplets, log: Vec::new(), stage: 0, stage_epochs: [0, 0] })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn log(&self) -> &[EpochLog] {
        &self.log
    }

    /// Contrastive loss only; updates the extractor and projector.
    pub fn run_stage1(&mut self) -> Result<()> {
        let g = self.network.groups().clone();
        let range = g.extractor.start..g.projector.end;
        self.run_stage(1, self.config.stage1_epochs, Objective::Contrastive, range)
    }

    /// Joint regression and contrastive loss with the head attached.
    pub fn run_stage2(&mut self) -> Result<()> {
        let g = self.network.groups().clone();
        let ranges = if self.config.freeze_projector_stage2 {
            vec![g.extractor, g.head]
        } else {
            vec![g.extractor.start..g.head.end]
        };
        // parameters are laid out extractor, projector, head
        let mut adam = Adam::new(self.params.len());
        for epoch in 0..self.config.stage2_epochs {
            self.epoch(2, epoch, Objective::Joint, &ranges, &mut adam)?;
        }
        self.stage = 2;
        self.stage_epochs[1] = self.config.stage2_epochs;
        Ok(())
    }

    fn run_stage(&mut self, stage: u32, epochs: usize, objective: Objective, range: Range<usize>) -> Result<()> {
        let mut adam = Adam::new(self.params.len());
        let ranges = [range];
        for epoch in 0..epochs {
            self.epoch(stage, epoch, objective, &ranges, &mut adam)?;
        }
        self.stage = stage;
        self.stage_epochs[0] = epochs;
        Ok(())
    }

    fn epoch(&mut self, stage: u32, epoch: usize, objective: Objective, ranges: &[Range<usize>], adam: &mut Adam) -> Result<()> {
        let lr = self.config.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..self.triplets.len()).collect();
        let stream = u64::from(stage) * 1_000_000 + epoch as u64;
        order.shuffle(&mut stream_rng(derive_seed(self.config.seed, SHUFFLE_TAG), stream));
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            // a lone triplet has no in-batch negatives besides its own
            if chunk.len() < 2 {
                continue;
            }
            let batch = TripletBatch::from_triplets(chunk.iter().map(|&i| &self.triplets[i]));
            let (loss, grads) =
                batch_gradient(&self.network, &self.params, &batch, &self.config, objective, self.config.tau_loss)?;
            if !loss.total.is_finite() {
                return Err(Error::Config(format!("loss diverged in stage {stage}, epoch {epoch}")));
            }
            adam.step(&mut self.params, &grads, ranges, lr, &self.config);
            sum.total += loss.total;
            sum.contrastive += loss.contrastive;
            sum.regression += loss.regression;
            batches += 1;
        }
        let scale = 1.0 / batches.max(1) as f64;
        let mean = LossBreakdown {
            total: sum.total * scale,
            contrastive: sum.contrastive * scale,
            regression: sum.regression * scale,
        };
        log::info!(
            "stage {stage} epoch {epoch}: loss {:.5} (contrastive {:.5}, regression {:.5})",
            mean.total,
            mean.contrastive,
            mean.regression
        );
        self.log.push(EpochLog { stage, epoch, learning_rate: lr, loss: mean });
        Ok(())
    }

    pub fn checkpoint(&self) -> EstimatorCheckpoint {
        let last = |s: u32| self.log.iter().rev().find(|l| l.stage == s).map(|l| l.loss);
        let final_loss = last(self.stage);
        EstimatorCheckpoint {
            config: self.config.clone(),
            params: NamedTensors { specs: self.network.specs().to_vec(), values: self.params.clone() },
            metadata: TrainingMetadata {
                stage: self.stage,
                stage1_epochs: self.stage_epochs[0],
                stage2_epochs: self.stage_epochs[1],
                final_contrastive: final_loss.map(|l| l.contrastive),
                final_regression: final_loss.filter(|_| self.stage == 2).map(|l| l.regression),
                tool_version: env!("CARGO_PKG_VERSION").into(),
            },
        }
    }
}

/// Both training stages; returns the final checkpoint and the epoch log.
pub fn train(
    config: &EstimatorConfig,
    scene_pool: &[RawPatch],
    camera_bank: &[CameraModel],
) -> Result<(EstimatorCheckpoint, Vec<EpochLog>)> {
    let mut t = Trainer::new(config.clone(), scene_pool, camera_bank)?;
    t.run_stage1()?;
    t.run_stage2()?;
    Ok((t.checkpoint(), t.log))
}
