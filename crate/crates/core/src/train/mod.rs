//! Mini-batch gradient descent on cross-entropy, with exact backprop and a
//! finite-difference checker.

mod backward;
pub mod data;
mod gradcheck;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{forward, ArchSpec, WeightSet};
use crate::error::{KwsError, Result};
use crate::frontend::FeatureWindow;

pub use backward::{backward, cross_entropy, BatchStats, LOSS_FLOOR};
pub use data::{
    clip_examples, load_dataset_dir, make_synthetic_dataset, synthetic_clip, synthetic_labels, Clip, Dataset,
    SyntheticSpec,
};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, TensorCheck, COORDS_PER_TENSOR};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub window: FeatureWindow,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 8,
            seed: 1,
            init_scale: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(KwsError::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(KwsError::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(KwsError::InvalidConfig(format!(
                "init scale must be positive, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

/// Running loss and accuracy over one pass through the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub weights: WeightSet<f32>,
    pub history: Vec<EpochStats>,
}

/// Trains from a uniform `[-init_scale, init_scale]` start. The example
/// order is reshuffled every epoch from the seeded generator.
pub fn train(arch: &ArchSpec, examples: &[LabeledExample], cfg: &TrainConfig) -> Result<Trained> {
    train_with(arch, examples, cfg, |_| {})
}

/// [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    arch: &ArchSpec,
    examples: &[LabeledExample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Trained> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(KwsError::EmptyInput("training set"));
    }
    let labels = arch.labels();
    if let Some(bad) = examples.iter().find(|e| e.label >= labels) {
        return Err(KwsError::LabelOutOfRange { label: bad.label, labels });
    }
    let mut weights = WeightSet::<f32>::init_uniform(arch, cfg.init_scale, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let lr = cfg.learning_rate as f32;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<LabeledExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let (grads, stats) = backward(arch, &weights, &batch)?;
            if !stats.mean_loss.is_finite() {
                return Err(KwsError::Diverged {
                    epoch,
                    loss: stats.mean_loss,
                });
            }
            loss_sum += stats.mean_loss * stats.count as f64;
            correct += stats.correct;
            if lr != 0.0 {
                for (w, g) in weights.tensors_mut().iter_mut().zip(grads.tensors()) {
                    for (wv, &gv) in w.data.iter_mut().zip(&g.data) {
                        *wv -= lr * gv;
                    }
                }
            }
        }
        let loss = loss_sum / examples.len() as f64;
        if !loss.is_finite() || !weights.is_finite() {
            return Err(KwsError::Diverged { epoch, loss });
        }
        let stats = EpochStats {
            epoch,
            loss,
            accuracy: correct as f64 / examples.len() as f64,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(Trained { weights, history })
}

/// Mean loss and accuracy of `weights` on `examples`.
pub fn evaluate(arch: &ArchSpec, weights: &WeightSet<f32>, examples: &[LabeledExample]) -> Result<EpochStats> {
    if examples.is_empty() {
        return Err(KwsError::EmptyInput("evaluation set"));
    }
    let mut loss = 0.0;
    let mut correct = 0;
    for ex in examples {
        let p = forward(arch, weights, &ex.window)?;
        loss += cross_entropy(&p, ex.label)?;
        let best = p
            .iter()
            .enumerate()
            .fold(0, |b, (i, &v)| if v > p[b] { i } else { b });
        correct += (best == ex.label) as usize;
    }
    Ok(EpochStats {
        epoch: 0,
        loss: loss / examples.len() as f64,
        accuracy: correct as f64 / examples.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_cnn_one, build_dnn_baseline};
    use crate::frontend::{ContextConfig, FrameConfig, Frontend};

    fn tiny_set(arch: &ArchSpec, ctx: ContextConfig) -> Vec<LabeledExample> {
        let ds = make_synthetic_dataset(&SyntheticSpec::new(arch.labels() - 1, 2, 4)).unwrap();
        let fe = Frontend::new(FrameConfig::default()).unwrap();
        clip_examples(&fe, &ds.train, ctx, 1).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let arch = build_cnn_one(3).unwrap();
        let set = tiny_set(&arch, ContextConfig::CNN);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            ..TrainConfig::default()
        };
        let out = train(&arch, &set, &cfg).unwrap();
        assert_eq!(out.weights, WeightSet::init_uniform(&arch, cfg.init_scale, cfg.seed).unwrap());
        assert_eq!(out.history.len(), 2);
        assert!(out.history.iter().all(|h| h.loss.is_finite()));
    }

    #[test]
    fn deterministic_per_seed() {
        let arch = build_dnn_baseline(3).unwrap();
        let set = tiny_set(&arch, ContextConfig::DNN);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let a = train(&arch, &set, &cfg).unwrap();
        let b = train(&arch, &set, &cfg).unwrap();
        assert_eq!(a, b);
        let c = train(&arch, &set, &TrainConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let arch = build_dnn_baseline(3).unwrap();
        let set = tiny_set(&arch, ContextConfig::DNN);
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 5,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&arch, &set, &cfg), Err(KwsError::Diverged { .. })));
    }

    #[test]
    fn bad_inputs() {
        let arch = build_dnn_baseline(3).unwrap();
        assert!(matches!(train(&arch, &[], &TrainConfig::default()), Err(KwsError::EmptyInput(_))));
        let mut set = tiny_set(&arch, ContextConfig::DNN);
        set[0].label = 7;
        assert!(matches!(
            train(&arch, &set, &TrainConfig::default()),
            Err(KwsError::LabelOutOfRange { label: 7, .. })
        ));
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&arch, &set[1..], &cfg), Err(KwsError::InvalidConfig(_))));
    }
}
