//! Mini-batch training: random temporal crops, horizontal flips, the
//! combined loss averaged over the batch, and Adam.
//!
//! Every random choice is drawn from a generator seeded by
//! `(seed, epoch)` or `(seed, epoch, step)`, so a run resumed from the
//! parameters, batch-norm statistics, optimizer state and epoch counter
//! continues exactly as the uninterrupted run would have.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::loss::{combined_loss, LossConfig};
use crate::model::UgcnModel;
use crate::nn::Mode;
use crate::optim::{adam_step, AdamConfig, LrSchedule, OptimizerState};
use crate::pose::PoseSequence;
use crate::skeleton::SkeletonTopology;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Epochs (0-based) at which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<usize>,
    /// Decoupled decay, applied to convolution weights only.
    pub weight_decay: f64,
    pub window: usize,
    /// Spacing of the training crops taken from each sequence per epoch;
    /// the first crop starts at a random offset below the stride.
    pub window_stride: usize,
    pub flip_prob: f64,
    pub seed: u64,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 110,
            batch_size: 256,
            lr: 1e-2,
            lr_decay: 0.1,
            lr_milestones: alloc::vec![80, 90, 100],
            weight_decay: 1e-5,
            window: 96,
            window_stride: 48,
            flip_prob: 0.5,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 || self.epochs == 0 || self.window_stride == 0 {
            return bad(alloc::format!(
                "epochs ({}), batch size ({}) and window stride ({}) must be positive",
                self.epochs, self.batch_size, self.window_stride
            ));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(alloc::format!(
                "lr {} must be positive, weight decay {} non-negative, flip probability {} in [0, 1]",
                self.lr, self.weight_decay, self.flip_prob
            ));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1])
            || self.lr_milestones.last().is_some_and(|&m| m >= self.epochs)
        {
            return bad(alloc::format!(
                "lr milestones {:?} must increase and stay below {} epochs",
                self.lr_milestones, self.epochs
            ));
        }
        self.loss.validate(self.window)
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.lr,
            factor: self.lr_decay,
            milestones: self.lr_milestones.clone(),
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule().lr_at(epoch)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Batch-mean loss values of one step or averages over an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossValues {
    pub position: f64,
    pub motion: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    /// Mean of the per-step batch-mean losses.
    pub loss: LossValues,
}

/// Mirrors a training pair: x is negated and left/right joints swap.
pub fn flip_augment(input: &PoseSequence, target: &PoseSequence, topo: &SkeletonTopology) -> (PoseSequence, PoseSequence) {
    (input.flipped(topo.mirror()), target.flipped(topo.mirror()))
}

fn mix(parts: &[u64]) -> u64 {
    // splitmix64 finalizer over a running hash
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: UgcnModel,
    pub optimizer: OptimizerState,
    pub config: TrainConfig,
    /// Number of completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochStats>,
}

impl Trainer {
    pub fn new(model: UgcnModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.window != model.config().frames {
            return Err(Error::InvalidConfig(alloc::format!(
                "training window {} differs from model input length {}",
                config.window,
                model.config().frames
            )));
        }
        Ok(Self {
            optimizer: OptimizerState::new(model.params()),
            model,
            config,
            epoch: 0,
            history: Vec::new(),
        })
    }

    /// Continues from saved state.
    pub fn resume(
        model: UgcnModel,
        optimizer: OptimizerState,
        config: TrainConfig,
        epoch: usize,
        history: Vec<EpochStats>,
    ) -> Result<Self> {
        let mut t = Self::new(model, config)?;
        if optimizer.m.len() != t.model.params().len() {
            return Err(Error::InvalidConfig("optimizer state does not match the model".into()));
        }
        t.optimizer = optimizer;
        t.epoch = epoch;
        t.history = history;
        Ok(t)
    }

    /// One optimization step on equally long `(input, target)` windows.
    pub fn step(&mut self, batch: &[Sample], lr: f64, seed: u64) -> Result<LossValues> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let inputs: Vec<PoseSequence> = batch.iter().map(|s| s.input.clone()).collect();
        let targets: Vec<PoseSequence> = batch.iter().map(|s| s.target.clone()).collect();
        let (grads, values, updates) = {
            let mut s = self.model.session(Mode::Train, seed);
            let x = s.graph.constant(PoseSequence::stack(&inputs)?);
            let y = s.graph.constant(PoseSequence::stack(&targets)?);
            let pred = self.model.forward(&mut s, x)?;
            let terms = combined_loss(&mut s.graph, pred, y, &self.config.loss)?;
            let inv = 1.0 / n as f64;
            let mean = s.graph.scale(terms.total, inv);
            let values = LossValues {
                position: s.graph.value(terms.position).item() * inv,
                motion: s.graph.value(terms.motion).item() * inv,
                total: s.graph.value(mean).item(),
            };
            if !values.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    step: self.optimizer.step as usize,
                });
            }
            s.graph.backward(mean)?;
            (s.param_grads(), values, core::mem::take(&mut s.stat_updates))
        };
        adam_step(self.model.params_mut(), &grads, &mut self.optimizer, &self.config.adam(), lr)?;
        let stats = self.model.stats_mut();
        for (idx, batch_stats) in &updates {
            stats[*idx].update(batch_stats);
        }
        Ok(values)
    }

    /// Draws this epoch's crops and flips, in batch order.
    pub fn epoch_batches(&self, data: &[Sample], epoch: usize) -> Result<Vec<Vec<Sample>>> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[cfg.seed, epoch as u64]));
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let topo = self.model.topology();
        let mut windows = Vec::new();
        for i in order {
            let s = &data[i];
            let last = s.frames().checked_sub(cfg.window).ok_or(Error::TooShort {
                frames: s.frames(),
                needed: cfg.window,
            })?;
            let first = rng.random_range(0..cfg.window_stride.min(last + 1));
            for start in (first..=last).step_by(cfg.window_stride) {
                let mut w = s.window(start, cfg.window)?;
                if rng.random::<f64>() < cfg.flip_prob {
                    let (a, b) = flip_augment(&w.input, &w.target, topo);
                    w.input = a;
                    w.target = b;
                }
                windows.push(w);
            }
        }
        windows.shuffle(&mut rng);
        Ok(windows.chunks(cfg.batch_size).map(<[Sample]>::to_vec).collect())
    }

    pub fn run_epoch(&mut self, data: &[Sample]) -> Result<EpochStats> {
        let epoch = self.epoch;
        let lr = self.config.lr_at(epoch);
        let batches = self.epoch_batches(data, epoch)?;
        let mut sum = LossValues::default();
        for (step, batch) in batches.iter().enumerate() {
            let v = self.step(batch, lr, mix(&[self.config.seed, epoch as u64, step as u64, 1]))?;
            sum.position += v.position;
            sum.motion += v.motion;
            sum.total += v.total;
        }
        let k = batches.len() as f64;
        let stats = EpochStats {
            epoch,
            lr,
            steps: batches.len(),
            loss: LossValues {
                position: sum.position / k,
                motion: sum.motion / k,
                total: sum.total / k,
            },
        };
        self.epoch += 1;
        self.history.push(stats);
        Ok(stats)
    }

    /// Runs the remaining epochs, reporting each one.
    pub fn train(&mut self, data: &[Sample], mut on_epoch: impl FnMut(&Self, &EpochStats)) -> Result<()> {
        while self.epoch < self.config.epochs {
            let stats = self.run_epoch(data)?;
            on_epoch(self, &stats);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_seeds_differ() {
        assert_ne!(mix(&[0, 1]), mix(&[1, 0]));
        assert_ne!(mix(&[0, 0, 0]), mix(&[0, 0, 1]));
        assert_eq!(mix(&[3, 4]), mix(&[3, 4]));
    }

    #[test]
    fn default_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 1e-2);
        assert!((c.lr_at(85) - 1e-3).abs() < 1e-15);
        assert!((c.lr_at(105) - 1e-5).abs() < 1e-17);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn canonical_flip_moves_left_wrist() {
        let topo = SkeletonTopology::h36m17();
        let mut p = PoseSequence::zeros(1, 17, 2);
        p.point_mut(0, 13)[0] = 0.3;
        let s = PoseSequence::zeros(1, 17, 3);
        let (f, _) = flip_augment(&p, &s, &topo);
        assert_eq!(f.point(0, 16)[0], -0.3);
        assert_eq!(f.point(0, 13)[0], 0.0);
    }
}
