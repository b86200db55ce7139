use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::features::build_features;
use super::model::{forward_input, MixturePrediction, ModelParams};
use crate::dataset::{PredictionExample, FUTURE_FRAMES};
use crate::geometry::Vec2;

/// Trajectory of the most probable mode (lowest index on ties).
pub fn predict_most_likely(model: &ModelParams, example: &PredictionExample) -> [Vec2; FUTURE_FRAMES] {
    let pred = forward_input(model, &build_features(example));
    pred.mode_trajectories[pred.most_likely_mode()]
}

/// Draws `n` trajectories: a mode from the mixture weights, then an
/// independent Gaussian position per step.
pub fn sample_from_prediction<R: Rng>(pred: &MixturePrediction, n: usize, rng: &mut R) -> Vec<[Vec2; FUTURE_FRAMES]> {
    let modes = pred.modes();
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = modes - 1;
            for (i, p) in pred.mode_probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    k = i;
                    break;
                }
            }
            // Zero-probability trailing modes must never be picked by
            // rounding in the cumulative sum.
            while k > 0 && pred.mode_probs[k] == 0.0 {
                k -= 1;
            }
            let mut traj = [Vec2::ZERO; FUTURE_FRAMES];
            for (t, slot) in traj.iter_mut().enumerate() {
                let ex: f64 = rng.sample(StandardNormal);
                let ey: f64 = rng.sample(StandardNormal);
                let m = pred.local_means[k][t];
                let s = pred.mode_scales[k][t];
                let local = Vec2::new(m.x + s.x * ex, m.y + s.y * ey);
                *slot = pred.origin + pred.rotation.to_world(local);
            }
            traj
        })
        .collect()
}

/// Samples keyed by `(seed, example_index)`, so any evaluation order gives
/// the same draws for a given example.
pub fn sample_trajectories(
    model: &ModelParams,
    example: &PredictionExample,
    n: usize,
    seed: u64,
    example_index: u64,
) -> Vec<[Vec2; FUTURE_FRAMES]> {
    let pred = forward_input(model, &build_features(example));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(example_index);
    sample_from_prediction(&pred, n, &mut rng)
}
