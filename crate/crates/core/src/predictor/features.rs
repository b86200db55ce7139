use crate::dataset::{PredictionExample, HISTORY_FRAMES};
use crate::geometry::{Rotation, Vec2};

/// Length of the feature vector: four heading-frame history displacements
/// and the current speed.
pub const FEATURE_DIM: usize = 2 * (HISTORY_FRAMES - 1) + 1;

/// Displacements shorter than this are treated as zero when choosing the
/// heading.
const HEADING_EPS: f64 = 1e-9;

/// Model input for one example, with the frame needed to map predictions
/// back to world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelInput {
    pub features: [f64; FEATURE_DIM],
    /// Heading frame to world frame.
    pub rotation: Rotation,
    /// World position of the heading-frame origin (the current position).
    pub origin: Vec2,
}

/// Expresses the history in a frame centred on the current position whose
/// +x axis follows the most recent nonzero displacement.
pub fn build_features(example: &PredictionExample) -> ModelInput {
    build_features_from(&example.history, example.dt)
}

pub(crate) fn build_features_from(history: &[Vec2; HISTORY_FRAMES], dt: f64) -> ModelInput {
    let mut disp = [Vec2::ZERO; HISTORY_FRAMES - 1];
    for (i, w) in history.windows(2).enumerate() {
        disp[i] = w[1] - w[0];
    }
    let rotation = disp
        .iter()
        .rev()
        .find(|d| d.norm() > HEADING_EPS)
        .map(|&d| Rotation::from_direction(d))
        .unwrap_or(Rotation::IDENTITY);

    let mut features = [0.0; FEATURE_DIM];
    for (i, d) in disp.iter().enumerate() {
        let local = rotation.to_local(*d);
        features[2 * i] = local.x;
        features[2 * i + 1] = local.y;
    }
    features[FEATURE_DIM - 1] = disp[HISTORY_FRAMES - 2].norm() / dt;
    ModelInput {
        features,
        rotation,
        origin: history[HISTORY_FRAMES - 1],
    }
}
