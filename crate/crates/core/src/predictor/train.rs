use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{build_features, build_features_from, ModelInput};
use super::model::{accumulate_nll_grad, LossAndGrad, ModelParams, ModelShape};
use super::{compute_example_weight, Variant};
use crate::dataset::{PredictionExample, FUTURE_FRAMES, HISTORY_FRAMES};
use crate::error::{Error, Result};
use crate::geometry::{Rotation, Vec2};
use crate::riskmap::RiskHeatmap;

const MIN_SCALE: f64 = 0.05;

fn default_epochs() -> usize {
    12
}
fn default_batch_size() -> usize {
    64
}
fn default_learning_rate() -> f64 {
    1e-2
}
fn default_momentum() -> f64 {
    0.9
}
fn default_loss_horizon() -> usize {
    6
}
fn default_hidden() -> usize {
    64
}
fn default_modes() -> usize {
    4
}
fn default_grad_clip() -> Option<f64> {
    Some(3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub seed: u64,
    /// Future steps that enter the loss (6 steps = 3 s).
    #[serde(default = "default_loss_horizon")]
    pub loss_horizon_steps: usize,
    /// Rotate every example by a random angle each epoch.
    #[serde(default)]
    pub rotation_augmentation: bool,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_modes")]
    pub modes: usize,
    /// Rescale batch gradients whose L2 norm exceeds this value.
    #[serde(default = "default_grad_clip")]
    pub grad_clip_norm: Option<f64>,
    /// Remove zero-weight examples before batching instead of keeping them
    /// in batches as zero terms.
    #[serde(default)]
    pub drop_zero_weight: bool,
}

impl TrainConfig {
    pub fn new(variant: Variant, seed: u64) -> Self {
        TrainConfig {
            variant,
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            momentum: default_momentum(),
            seed,
            loss_horizon_steps: default_loss_horizon(),
            rotation_augmentation: false,
            hidden: default_hidden(),
            modes: default_modes(),
            grad_clip_norm: default_grad_clip(),
            drop_zero_weight: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if self.loss_horizon_steps == 0 || self.loss_horizon_steps > FUTURE_FRAMES {
            return bad(format!("loss_horizon_steps must lie in 1..={FUTURE_FRAMES}"));
        }
        if self.hidden == 0 || self.modes == 0 {
            return bad("hidden and modes must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)".into());
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad("grad_clip_norm must be positive".into());
            }
        }
        Ok(())
    }
}

/// One weighted term of a batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub input: &'a ModelInput,
    pub future: &'a [Vec2; FUTURE_FRAMES],
    pub weight: f64,
}

/// Mean over the batch of the weighted NLL terms: the sum is divided by the
/// batch length, not by the sum of weights.
pub fn batch_loss_and_grad(model: &ModelParams, batch: &[BatchItem<'_>], horizon: usize) -> LossAndGrad {
    let mut grad = vec![0.0; model.params.len()];
    let loss = accumulate_batch(model, batch, horizon, &mut grad);
    LossAndGrad { loss, grad }
}

fn accumulate_batch(model: &ModelParams, batch: &[BatchItem<'_>], horizon: usize, grad: &mut [f64]) -> f64 {
    let inv = 1.0 / batch.len().max(1) as f64;
    let mut loss = 0.0;
    for item in batch {
        loss += accumulate_nll_grad(model, item.input, item.future, item.weight, horizon, inv, grad);
    }
    loss * inv
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ModelParams,
    /// Mean weighted loss per epoch.
    pub loss_history: Vec<f64>,
    /// Examples that took part in batching.
    pub examples_used: usize,
    pub effective_examples: usize,
}

/// RMS displacement per frame; sets the model's length unit.
fn length_scale(examples: &[&PredictionExample]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ex in examples {
        for w in ex.history.windows(2).chain(ex.future.windows(2)) {
            let d = w[1].dist(w[0]);
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return 1.0;
    }
    (sum / n as f64).sqrt().max(MIN_SCALE)
}

fn rotated(example: &PredictionExample, theta: f64) -> (ModelInput, [Vec2; FUTURE_FRAMES]) {
    let r = Rotation::from_angle(theta);
    let c = example.current_position;
    let rot = |p: Vec2| c + r.to_world(p - c);
    let history: [Vec2; HISTORY_FRAMES] = example.history.map(rot);
    (build_features_from(&history, example.dt), example.future.map(rot))
}

/// Seeded minibatch SGD with momentum on the weighted mixture NLL.
pub fn train(examples: &[PredictionExample], heatmap: &RiskHeatmap, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let weighted: Vec<(&PredictionExample, f64)> = examples
        .iter()
        .map(|ex| (ex, compute_example_weight(ex, heatmap, config.variant)))
        .filter(|&(_, w)| !(config.drop_zero_weight && w == 0.0))
        .collect();
    let effective = weighted.iter().filter(|(_, w)| *w > 0.0).count();
    if effective == 0 {
        return Err(Error::Training("no effective examples: every training weight is zero".into()));
    }

    let members: Vec<&PredictionExample> = weighted.iter().map(|(e, _)| *e).collect();
    let scale = length_scale(&members);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shape = ModelShape::new(config.hidden, config.modes);
    let mut model = ModelParams::init_uniform(shape, scale, &mut rng);

    let mut inputs: Vec<ModelInput> = members.iter().map(|e| build_features(e)).collect();
    let mut futures: Vec<[Vec2; FUTURE_FRAMES]> = members.iter().map(|e| e.future).collect();

    let n = weighted.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut velocity = vec![0.0; model.params.len()];
    let mut grad = vec![0.0; model.params.len()];
    let mut loss_history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        if config.rotation_augmentation {
            for (i, ex) in members.iter().enumerate() {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let (inp, fut) = rotated(ex, theta);
                inputs[i] = inp;
                futures[i] = fut;
            }
        }
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<BatchItem<'_>> = chunk
                .iter()
                .map(|&i| BatchItem {
                    input: &inputs[i],
                    future: &futures[i],
                    weight: weighted[i].1,
                })
                .collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = accumulate_batch(&model, &batch, config.loss_horizon_steps, &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!("training diverged (batch loss {loss})")));
            }
            epoch_loss += loss * chunk.len() as f64;
            if let Some(limit) = config.grad_clip_norm {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > limit {
                    let k = limit / norm;
                    grad.iter_mut().for_each(|g| *g *= k);
                }
            }
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = config.momentum * *v + g;
                *p -= config.learning_rate * *v;
            }
        }
        loss_history.push(epoch_loss / n as f64);
    }
    Ok(TrainOutcome {
        model,
        loss_history,
        examples_used: n,
        effective_examples: effective,
    })
}
