//! Gradient, weighting and training-loop checks for the predictor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskweave::dataset::{AgentClass, PredictionExample};
use riskweave::geometry::{Extents, Rotation, Vec2};
use riskweave::predictor::*;
use riskweave::riskmap::RiskHeatmap;

/// Central-difference gradient of the value-only loss.
fn finite_difference(model: &ModelParams, input: &ModelInput, future: &[Vec2; 8], weight: f64, h: f64) -> Vec<f64> {
    let mut probe = model.clone();
    (0..model.params.len())
        .map(|i| {
            let orig = probe.params[i];
            probe.params[i] = orig + h;
            let up = nll_loss_value(&probe, input, future, weight, 6);
            probe.params[i] = orig - h;
            let down = nll_loss_value(&probe, input, future, weight, 6);
            probe.params[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn random_case(rng: &mut ChaCha8Rng) -> (ModelParams, ModelInput, [Vec2; 8], f64) {
    let hidden = rng.random_range(2..6);
    let modes = rng.random_range(1..4);
    let scale = rng.random_range(0.5..3.0);
    let shape = ModelShape::new(hidden, modes);
    let mut model = ModelParams::init_uniform(shape, scale, rng);
    // Spread parameters a little beyond the init range.
    for p in &mut model.params {
        *p *= 4.0;
    }
    let mut features = [0.0; FEATURE_DIM];
    for f in &mut features {
        *f = rng.random_range(-3.0..3.0);
    }
    let input = ModelInput {
        features,
        rotation: Rotation::from_angle(rng.random_range(0.0..std::f64::consts::TAU)),
        origin: Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
    };
    let mut future = [Vec2::ZERO; 8];
    for (t, p) in future.iter_mut().enumerate() {
        *p = input.origin
            + Vec2::new(
                0.4 * (t + 1) as f64 + rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
    }
    (model, input, future, rng.random_range(0.5..3.0))
}

/// Relative error with a unit floor on the denominator so near-zero
/// components are compared absolutely.
fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..20 {
        let (model, input, future, weight) = random_case(&mut rng);
        let lg = nll_loss_weighted(&model, &input, &future, weight, 6).unwrap();
        assert!(lg.loss.is_finite());
        let fd = finite_difference(&model, &input, &future, weight, 1e-5);
        let err = max_rel_error(&lg.grad, &fd);
        assert!(err < 1e-4, "case {case}: max relative error {err}");
    }
}

#[test]
fn zero_weight_terms_vanish_from_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (model, _, _, _) = random_case(&mut rng);
    let cases: Vec<_> = (0..6).map(|_| random_case(&mut rng)).collect();
    let weights = [1.0, 0.0, 2.0, 0.0, 0.0, 1.5];
    let batch: Vec<BatchItem<'_>> = cases
        .iter()
        .zip(weights)
        .map(|((_, inp, fut, _), w)| BatchItem {
            input: inp,
            future: fut,
            weight: w,
        })
        .collect();
    // Inputs come from differently shaped models but the features are
    // shape-independent.
    let full = batch_loss_and_grad(&model, &batch, 6);
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.params.len()];
    for item in batch.iter().filter(|b| b.weight > 0.0) {
        let lg = nll_loss_weighted(&model, item.input, item.future, item.weight, 6).unwrap();
        loss += lg.loss;
        for (g, x) in grad.iter_mut().zip(lg.grad) {
            *g += x;
        }
    }
    let n = batch.len() as f64;
    assert!((full.loss - loss / n).abs() < 1e-12);
    for (a, b) in full.grad.iter().zip(&grad) {
        assert!((a - b / n).abs() < 1e-12);
    }
}

fn constant_velocity_examples(n: usize, seed: u64) -> Vec<PredictionExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let speed = rng.random_range(2.0..12.0);
            let heading = rng.random_range(0.0..std::f64::consts::TAU);
            let dir = Vec2::new(heading.cos(), heading.sin());
            let start = Vec2::new(rng.random_range(10.0..90.0), rng.random_range(10.0..90.0));
            let at = |k: usize| start + dir * (speed * 0.5 * k as f64);
            let mut history = [Vec2::ZERO; 5];
            let mut future = [Vec2::ZERO; 8];
            for k in 0..5 {
                history[k] = at(k);
            }
            for k in 0..8 {
                future[k] = at(k + 5);
            }
            PredictionExample {
                scene_id: format!("s{}", i % 7),
                agent_id: format!("a{i:04}"),
                map_id: "m".into(),
                agent_class: AgentClass::Vehicle,
                t_ref: 4,
                history,
                future,
                current_position: history[4],
                dt: 0.5,
                max_history_speed: speed,
                window_path_length: speed * 6.0,
                whole_track_stationary: false,
            }
        })
        .collect()
}

fn parked(n: usize) -> Vec<PredictionExample> {
    (0..n)
        .map(|i| {
            let p = Vec2::new(20.0 + i as f64, 30.0);
            PredictionExample {
                scene_id: "p".into(),
                agent_id: format!("park{i:03}"),
                map_id: "m".into(),
                agent_class: AgentClass::Vehicle,
                t_ref: 4,
                history: [p; 5],
                future: [p; 8],
                current_position: p,
                dt: 0.5,
                max_history_speed: 0.0,
                window_path_length: 0.0,
                whole_track_stationary: true,
            }
        })
        .collect()
}

fn flat_heatmap() -> RiskHeatmap {
    let ext = Extents {
        x_min: 0.0,
        y_min: 0.0,
        x_max: 100.0,
        y_max: 100.0,
    };
    RiskHeatmap::uniform("m", ext, 100)
}

#[test]
fn training_is_deterministic() {
    let ex = constant_velocity_examples(150, 1);
    let mut cfg = TrainConfig::new(Variant::Baseline, 11);
    cfg.epochs = 3;
    let a = train(&ex, &flat_heatmap(), &cfg).unwrap();
    let b = train(&ex, &flat_heatmap(), &cfg).unwrap();
    let bytes = |m: &ModelParams| m.params.iter().map(|p| p.to_bits()).collect::<Vec<_>>();
    assert_eq!(bytes(&a.model), bytes(&b.model));
    assert_eq!(a.loss_history, b.loss_history);
}

#[test]
fn loss_decreases_on_constant_velocity_toy_set() {
    let ex = constant_velocity_examples(200, 4);
    let cfg = TrainConfig::new(Variant::Baseline, 5);
    let out = train(&ex, &flat_heatmap(), &cfg).unwrap();
    let h = &out.loss_history;
    assert_eq!(h.len(), 12);
    assert!(h[11] < h[0], "loss history {h:?}");
}

#[test]
fn non_stationary_equals_baseline_without_parked_vehicles() {
    let moving = constant_velocity_examples(120, 8);
    let mut mixed = moving.clone();
    mixed.extend(parked(40));
    let mut ns = TrainConfig::new(Variant::NonStationary, 3);
    ns.epochs = 4;
    ns.drop_zero_weight = true;
    let mut base = ns.clone();
    base.variant = Variant::Baseline;
    let a = train(&mixed, &flat_heatmap(), &ns).unwrap();
    let b = train(&moving, &flat_heatmap(), &base).unwrap();
    for (x, y) in a.model.params.iter().zip(&b.model.params) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn all_zero_weights_is_a_training_error() {
    let cfg = TrainConfig::new(Variant::NonStationary, 0);
    let err = train(&parked(10), &flat_heatmap(), &cfg).unwrap_err();
    assert!(err.to_string().contains("no effective examples"), "{err}");
}

#[test]
fn most_likely_prediction_is_rotation_equivariant() {
    let ex = constant_velocity_examples(100, 12);
    let mut cfg = TrainConfig::new(Variant::Baseline, 2);
    cfg.epochs = 2;
    let model = train(&ex, &flat_heatmap(), &cfg).unwrap().model;
    let r = Rotation::from_angle(1.1);
    for e in ex.iter().take(20) {
        let mut turned = e.clone();
        turned.history = e.history.map(|p| r.to_world(p));
        turned.future = e.future.map(|p| r.to_world(p));
        turned.current_position = r.to_world(e.current_position);
        let a = predict_most_likely(&model, e);
        let b = predict_most_likely(&model, &turned);
        for (p, q) in a.iter().zip(b) {
            assert!(r.to_world(*p).dist(q) < 1e-9);
        }
    }
}

#[test]
fn most_likely_mode_ignores_logit_shift() {
    let ex = constant_velocity_examples(5, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let model = ModelParams::init_uniform(ModelShape::new(16, 4), 2.0, &mut rng);
    let mut shifted = model.clone();
    shifted.shift_logits(3.7);
    for e in &ex {
        assert_eq!(predict_most_likely(&model, e), predict_most_likely(&shifted, e));
    }
}

#[test]
fn checkpoint_round_trip() {
    let ex = constant_velocity_examples(64, 15);
    let mut cfg = TrainConfig::new(Variant::Combined, 21);
    cfg.epochs = 1;
    let out = train(&ex, &flat_heatmap(), &cfg).unwrap();
    let ck = Checkpoint::new(riskweave::dataset::ModelClass::Vehicle, &cfg, &out);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vehicle_combined.json");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.model().unwrap(), out.model);
}

#[test]
fn samples_are_keyed_by_seed_and_index() {
    let ex = constant_velocity_examples(3, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let model = ModelParams::init_uniform(ModelShape::new(8, 4), 2.0, &mut rng);
    let a = sample_trajectories(&model, &ex[0], 10, 99, 5);
    let b = sample_trajectories(&model, &ex[0], 10, 99, 5);
    let c = sample_trajectories(&model, &ex[0], 10, 99, 6);
    assert_eq!(a, b);
    assert_ne!(a, c);
}
