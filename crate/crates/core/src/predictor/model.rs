//! Mixture-density network: one tanh hidden layer feeding mixture logits,
//! per-mode per-step displacement means and per-mode per-step log-scales.
//!
//! All parameters live in one flat vector so optimizers and gradient
//! checks can treat them uniformly. Layout, each tensor row-major:
//! `w1 [hidden × input] | b1 [hidden] | w2 [out × hidden] | b2 [out]`.
//! Output layout: `logits [K] | mu [K × steps × 2] | log_sigma [K × steps × 2]`.
//!
//! Means and scales are produced in units of `scale` meters: the mean
//! displacement of a step is `scale · mu` and `log σ = log_sigma + ln scale`
//! (then clamped), so training is conditioned the same way for slow and
//! fast agent classes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{ModelInput, FEATURE_DIM};
use crate::dataset::FUTURE_FRAMES;
use crate::error::{Error, Result};
use crate::geometry::{Rotation, Vec2};

pub const LOG_SIGMA_MIN: f64 = -5.0;
pub const LOG_SIGMA_MAX: f64 = 5.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input: usize,
    pub hidden: usize,
    pub modes: usize,
    pub steps: usize,
}

impl ModelShape {
    pub fn new(hidden: usize, modes: usize) -> Self {
        ModelShape {
            input: FEATURE_DIM,
            hidden,
            modes,
            steps: FUTURE_FRAMES,
        }
    }

    pub fn output(&self) -> usize {
        self.modes * (1 + 4 * self.steps)
    }

    pub fn param_count(&self) -> usize {
        self.hidden * (self.input + 1) + self.output() * (self.hidden + 1)
    }

    fn w1(&self) -> usize {
        0
    }
    fn b1(&self) -> usize {
        self.hidden * self.input
    }
    fn w2(&self) -> usize {
        self.b1() + self.hidden
    }
    fn b2(&self) -> usize {
        self.w2() + self.output() * self.hidden
    }

    fn mu(&self, k: usize, t: usize, d: usize) -> usize {
        self.modes + (k * self.steps + t) * 2 + d
    }

    fn log_sigma(&self, k: usize, t: usize, d: usize) -> usize {
        self.modes + self.modes * self.steps * 2 + (k * self.steps + t) * 2 + d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub shape: ModelShape,
    /// Length unit (meters) of inputs and outputs.
    pub scale: f64,
    pub params: Vec<f64>,
}

/// Named views of the flat parameter vector.
pub struct Tensors<'a> {
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
}

impl ModelParams {
    pub fn zeros(shape: ModelShape, scale: f64) -> Self {
        ModelParams {
            shape,
            scale,
            params: vec![0.0; shape.param_count()],
        }
    }

    /// Every parameter drawn from uniform(-0.1, 0.1).
    pub fn init_uniform<R: Rng>(shape: ModelShape, scale: f64, rng: &mut R) -> Self {
        let params = (0..shape.param_count())
            .map(|_| rng.random_range(-0.1..0.1))
            .collect();
        ModelParams {
            shape,
            scale,
            params,
        }
    }

    pub fn tensors(&self) -> Tensors<'_> {
        let s = &self.shape;
        let p = &self.params;
        Tensors {
            w1: &p[s.w1()..s.b1()],
            b1: &p[s.b1()..s.w2()],
            w2: &p[s.w2()..s.b2()],
            b2: &p[s.b2()..],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.input != FEATURE_DIM || self.shape.steps != FUTURE_FRAMES {
            return Err(Error::Config(format!(
                "model expects {} features and {} steps, got {} and {}",
                FEATURE_DIM, FUTURE_FRAMES, self.shape.input, self.shape.steps
            )));
        }
        if self.shape.modes == 0 || self.shape.hidden == 0 {
            return Err(Error::Config("model needs at least one mode and hidden unit".into()));
        }
        if self.params.len() != self.shape.param_count() {
            return Err(Error::Config(format!(
                "model has {} parameters, shape requires {}",
                self.params.len(),
                self.shape.param_count()
            )));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Config(format!("model scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }

    /// Adds `c` to every mixture-logit bias.
    pub fn shift_logits(&mut self, c: f64) {
        let b2 = self.shape.b2();
        for k in 0..self.shape.modes {
            self.params[b2 + k] += c;
        }
    }
}

/// K-mode distribution over future positions.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePrediction {
    pub mode_probs: Vec<f64>,
    pub mode_log_probs: Vec<f64>,
    /// World-frame mean positions, `[mode][step]`.
    pub mode_trajectories: Vec<[Vec2; FUTURE_FRAMES]>,
    /// Heading-frame standard deviations (meters), `[mode][step]`.
    pub mode_scales: Vec<[Vec2; FUTURE_FRAMES]>,
    /// Heading-frame mean positions relative to `origin`.
    pub local_means: Vec<[Vec2; FUTURE_FRAMES]>,
    pub log_scales: Vec<[Vec2; FUTURE_FRAMES]>,
    pub rotation: Rotation,
    pub origin: Vec2,
}

impl MixturePrediction {
    pub fn modes(&self) -> usize {
        self.mode_probs.len()
    }

    /// Index of the most probable mode, lowest index on ties.
    pub fn most_likely_mode(&self) -> usize {
        let mut best = 0;
        for k in 1..self.mode_log_probs.len() {
            if self.mode_log_probs[k] > self.mode_log_probs[best] {
                best = k;
            }
        }
        best
    }

    pub fn to_local(&self, world: Vec2) -> Vec2 {
        self.rotation.to_local(world - self.origin)
    }
}

/// Intermediate values kept for backpropagation.
pub(crate) struct ForwardCache {
    x: [f64; FEATURE_DIM],
    hidden: Vec<f64>,
    /// Per output log-scale: whether the clamp is inactive.
    log_sigma_free: Vec<bool>,
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn forward_cached(model: &ModelParams, input: &ModelInput) -> (MixturePrediction, ForwardCache) {
    let s = model.shape;
    let t = model.tensors();
    let mut x = [0.0; FEATURE_DIM];
    for (xi, f) in x.iter_mut().zip(input.features) {
        *xi = f / model.scale;
    }

    let mut hidden = vec![0.0; s.hidden];
    for (j, h) in hidden.iter_mut().enumerate() {
        let row = &t.w1[j * s.input..(j + 1) * s.input];
        let z: f64 = t.b1[j] + row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>();
        *h = z.tanh();
    }
    let mut out = t.b2.to_vec();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &t.w2[i * s.hidden..(i + 1) * s.hidden];
        *o += row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
    }

    let mode_log_probs = log_softmax(&out[..s.modes]);
    let mode_probs = mode_log_probs.iter().map(|l| l.exp()).collect();
    let ln_scale = model.scale.ln();
    let mut local_means = vec![[Vec2::ZERO; FUTURE_FRAMES]; s.modes];
    let mut log_scales = vec![[Vec2::ZERO; FUTURE_FRAMES]; s.modes];
    let mut mode_scales = vec![[Vec2::ZERO; FUTURE_FRAMES]; s.modes];
    let mut mode_trajectories = vec![[Vec2::ZERO; FUTURE_FRAMES]; s.modes];
    let mut log_sigma_free = vec![false; s.modes * s.steps * 2];
    for k in 0..s.modes {
        let mut acc = Vec2::ZERO;
        for step in 0..s.steps {
            acc += Vec2::new(out[s.mu(k, step, 0)], out[s.mu(k, step, 1)]) * model.scale;
            local_means[k][step] = acc;
            let mut ls = [0.0; 2];
            for (d, l) in ls.iter_mut().enumerate() {
                let raw = out[s.log_sigma(k, step, d)] + ln_scale;
                log_sigma_free[(k * s.steps + step) * 2 + d] = raw > LOG_SIGMA_MIN && raw < LOG_SIGMA_MAX;
                *l = raw.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX);
            }
            log_scales[k][step] = Vec2::new(ls[0], ls[1]);
            mode_scales[k][step] = Vec2::new(ls[0].exp(), ls[1].exp());
            mode_trajectories[k][step] = input.origin + input.rotation.to_world(acc);
        }
    }
    let prediction = MixturePrediction {
        mode_probs,
        mode_log_probs,
        mode_trajectories,
        mode_scales,
        local_means,
        log_scales,
        rotation: input.rotation,
        origin: input.origin,
    };
    (
        prediction,
        ForwardCache {
            x,
            hidden,
            log_sigma_free,
        },
    )
}

/// Deterministic forward pass.
pub fn forward(model: &ModelParams, features: &[f64], origin: Vec2, rotation: Rotation) -> Result<MixturePrediction> {
    if features.len() != model.shape.input {
        return Err(Error::Config(format!(
            "feature dimension {} does not match model input {}",
            features.len(),
            model.shape.input
        )));
    }
    model.validate()?;
    let mut f = [0.0; FEATURE_DIM];
    f.copy_from_slice(features);
    Ok(forward_input(
        model,
        &ModelInput {
            features: f,
            rotation,
            origin,
        },
    ))
}

pub fn forward_input(model: &ModelParams, input: &ModelInput) -> MixturePrediction {
    forward_cached(model, input).0
}

/// Per-mode log-likelihood terms `log π_k + Σ_t log N(gt_t | mean_kt, σ_kt)`
/// over the first `horizon` steps, in the heading frame.
fn mode_log_joint(pred: &MixturePrediction, local_gt: &[Vec2], horizon: usize) -> Vec<f64> {
    (0..pred.modes())
        .map(|k| {
            let mut ll = pred.mode_log_probs[k];
            for (t, y) in local_gt.iter().take(horizon).enumerate() {
                let m = pred.local_means[k][t];
                let ls = pred.log_scales[k][t];
                let zx = (y.x - m.x) * (-ls.x).exp();
                let zy = (y.y - m.y) * (-ls.y).exp();
                ll -= ls.x + ls.y + 2.0 * HALF_LN_2PI + 0.5 * (zx * zx + zy * zy);
            }
            ll
        })
        .collect()
}

/// Unweighted mixture negative log-likelihood of the ground truth over the
/// first `horizon` future steps.
pub fn mixture_nll(pred: &MixturePrediction, future: &[Vec2; FUTURE_FRAMES], horizon: usize) -> f64 {
    let local: Vec<Vec2> = future.iter().map(|&p| pred.to_local(p)).collect();
    -log_sum_exp(&mode_log_joint(pred, &local, horizon))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    pub loss: f64,
    /// Same layout as [`ModelParams::params`].
    pub grad: Vec<f64>,
}

/// Weighted mixture NLL of one example and its gradient with respect to
/// every model parameter, accumulated into `grad` (scaled by `grad_scale`).
/// Returns the weighted loss.
pub(crate) fn accumulate_nll_grad(
    model: &ModelParams,
    input: &ModelInput,
    future: &[Vec2; FUTURE_FRAMES],
    weight: f64,
    horizon: usize,
    grad_scale: f64,
    grad: &mut [f64],
) -> f64 {
    if weight == 0.0 {
        return 0.0;
    }
    let s = model.shape;
    let (pred, cache) = forward_cached(model, input);
    let local: Vec<Vec2> = future.iter().map(|&p| pred.to_local(p)).collect();
    let joint = mode_log_joint(&pred, &local, horizon);
    let lse = log_sum_exp(&joint);
    let loss = -weight * lse;

    // Gradient with respect to the raw outputs.
    let c = weight * grad_scale;
    let mut g_out = vec![0.0; s.output()];
    for k in 0..s.modes {
        let resp = (joint[k] - lse).exp();
        g_out[k] = c * (pred.mode_probs[k] - resp);
        // Reverse cumulative sum: step-t mean depends on mu of steps ≤ t.
        let mut carry = [0.0; 2];
        for t in (0..s.steps).rev() {
            if t < horizon {
                let m = pred.local_means[k][t];
                let ls = pred.log_scales[k][t];
                let y = local[t];
                for d in 0..2 {
                    let (yd, md, lsd) = if d == 0 { (y.x, m.x, ls.x) } else { (y.y, m.y, ls.y) };
                    let inv_var = (-2.0 * lsd).exp();
                    let diff = yd - md;
                    // d(-w·r·ll)/d mean = -w·r·diff/σ²
                    carry[d] += -c * resp * diff * inv_var;
                    if cache.log_sigma_free[(k * s.steps + t) * 2 + d] {
                        g_out[s.log_sigma(k, t, d)] = -c * resp * (diff * diff * inv_var - 1.0);
                    }
                }
            }
            g_out[s.mu(k, t, 0)] = carry[0] * model.scale;
            g_out[s.mu(k, t, 1)] = carry[1] * model.scale;
        }
    }

    let t = model.tensors();
    let (w1o, b1o, w2o, b2o) = (s.w1(), s.b1(), s.w2(), s.b2());
    let mut g_hidden = vec![0.0; s.hidden];
    for (i, &go) in g_out.iter().enumerate() {
        if go == 0.0 {
            continue;
        }
        grad[b2o + i] += go;
        let row = w2o + i * s.hidden;
        for j in 0..s.hidden {
            grad[row + j] += go * cache.hidden[j];
            g_hidden[j] += go * t.w2[i * s.hidden + j];
        }
    }
    for j in 0..s.hidden {
        let g_pre = g_hidden[j] * (1.0 - cache.hidden[j] * cache.hidden[j]);
        grad[b1o + j] += g_pre;
        let row = w1o + j * s.input;
        for (i, &xi) in cache.x.iter().enumerate() {
            grad[row + i] += g_pre * xi;
        }
    }
    loss
}

/// `-weight · log Σ_k π_k Π_{t<horizon} N(gt_t | mean_kt, diag σ_kt²)` and its
/// parameter gradient.
pub fn nll_loss_weighted(
    model: &ModelParams,
    input: &ModelInput,
    future: &[Vec2; FUTURE_FRAMES],
    weight: f64,
    horizon: usize,
) -> Result<LossAndGrad> {
    if !(weight.is_finite() && weight >= 0.0) {
        return Err(Error::Numerical(format!("weight must be finite and non-negative, got {weight}")));
    }
    if horizon == 0 || horizon > FUTURE_FRAMES {
        return Err(Error::Config(format!("loss horizon {horizon} must lie in 1..={FUTURE_FRAMES}")));
    }
    if !input.features.iter().all(|f| f.is_finite())
        || !input.origin.is_finite()
        || !future.iter().all(|p| p.is_finite())
        || !model.params.iter().all(|p| p.is_finite())
    {
        return Err(Error::Numerical("non-finite input to loss".into()));
    }
    let mut grad = vec![0.0; model.params.len()];
    let loss = accumulate_nll_grad(model, input, future, weight, horizon, 1.0, &mut grad);
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("loss evaluated to {loss}")));
    }
    Ok(LossAndGrad { loss, grad })
}

/// Value-only counterpart of [`nll_loss_weighted`].
pub fn nll_loss_value(
    model: &ModelParams,
    input: &ModelInput,
    future: &[Vec2; FUTURE_FRAMES],
    weight: f64,
    horizon: usize,
) -> f64 {
    if weight == 0.0 {
        return 0.0;
    }
    weight * mixture_nll(&forward_input(model, input), future, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn input_at(origin: Vec2) -> ModelInput {
        ModelInput {
            features: [0.0; FEATURE_DIM],
            rotation: Rotation::IDENTITY,
            origin,
        }
    }

    #[test]
    fn zero_heads_predict_current_position() {
        let model = ModelParams::zeros(ModelShape::new(8, 4), 3.0);
        let p = forward_input(&model, &input_at(Vec2::new(7.0, -2.0)));
        for traj in &p.mode_trajectories {
            assert!(traj.iter().all(|&q| q == Vec2::new(7.0, -2.0)));
        }
        assert_eq!(p.mode_probs, vec![0.25; 4]);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let model = ModelParams::zeros(ModelShape::new(8, 4), 1.0);
        let err = forward(&model, &[0.0; 5], Vec2::ZERO, Rotation::IDENTITY).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = ModelParams::init_uniform(ModelShape::new(16, 4), 2.0, &mut rng);
        let mut inp = input_at(Vec2::new(1.0, 1.0));
        inp.features = [0.3, -0.2, 1.0, 0.5, 2.0, 0.0, 1.5, -1.0, 3.0];
        let a = forward_input(&model, &inp);
        let b = forward_input(&model, &inp);
        assert_eq!(a, b);
        let total: f64 = a.mode_probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn at_mean_with_unit_scale_matches_closed_form() {
        // One mode, zero outputs, unit scale: mean = origin, σ = 1.
        let model = ModelParams::zeros(ModelShape::new(4, 1), 1.0);
        let origin = Vec2::new(2.0, 3.0);
        let future = [origin; FUTURE_FRAMES];
        for w in [1.0, 2.5] {
            let lg = nll_loss_weighted(&model, &input_at(origin), &future, w, 6).unwrap();
            let expected = w * 6.0 * (2.0 * std::f64::consts::PI).ln();
            assert!((lg.loss - expected).abs() < 1e-12, "{} vs {expected}", lg.loss);
        }
    }

    #[test]
    fn zero_weight_is_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = ModelParams::init_uniform(ModelShape::new(6, 3), 1.0, &mut rng);
        let future = [Vec2::new(3.0, 1.0); FUTURE_FRAMES];
        let lg = nll_loss_weighted(&model, &input_at(Vec2::ZERO), &future, 0.0, 6).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert!(lg.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let model = ModelParams::zeros(ModelShape::new(4, 2), 1.0);
        let mut future = [Vec2::ZERO; FUTURE_FRAMES];
        future[3].x = f64::NAN;
        let err = nll_loss_weighted(&model, &input_at(Vec2::ZERO), &future, 1.0, 6).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        let err = nll_loss_weighted(&model, &input_at(Vec2::ZERO), &[Vec2::ZERO; 8], -1.0, 6).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn log_sigma_is_clamped() {
        let mut model = ModelParams::zeros(ModelShape::new(2, 1), 1.0);
        let b2 = model.shape.b2();
        let idx = b2 + model.shape.log_sigma(0, 0, 0);
        model.params[idx] = -40.0;
        model.params[idx + 1] = 40.0;
        let p = forward_input(&model, &input_at(Vec2::ZERO));
        assert_eq!(p.log_scales[0][0], Vec2::new(LOG_SIGMA_MIN, LOG_SIGMA_MAX));
    }
}
