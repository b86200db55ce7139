//! Per-class multimodal trajectory predictor trained with per-example
//! weighted mixture negative log-likelihood.

mod checkpoint;
mod features;
mod model;
mod sample;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{AgentClass, PredictionExample};
use crate::riskmap::RiskHeatmap;

pub use checkpoint::Checkpoint;
pub use features::{build_features, ModelInput, FEATURE_DIM};
pub use model::{
    forward, forward_input, mixture_nll, nll_loss_value, nll_loss_weighted, LossAndGrad,
    MixturePrediction, ModelParams, ModelShape, Tensors, LOG_SIGMA_MAX, LOG_SIGMA_MIN,
};
pub use sample::{predict_most_likely, sample_from_prediction, sample_trajectories};
pub use train::{batch_loss_and_grad, train, BatchItem, TrainConfig, TrainOutcome};

/// Loss re-weighting scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    LocationRisk,
    NonStationary,
    Combined,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::LocationRisk,
        Variant::NonStationary,
        Variant::Combined,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::LocationRisk => "location_risk",
            Variant::NonStationary => "non_stationary",
            Variant::Combined => "combined",
        }
    }

    /// Human-readable name used in tables.
    pub fn title(self) -> &'static str {
        match self {
            Variant::Baseline => "Baseline",
            Variant::LocationRisk => "Location-Risk",
            Variant::NonStationary => "Non-Stationary",
            Variant::Combined => "Location-Risk+Non-Stationary",
        }
    }

    fn uses_location(self) -> bool {
        matches!(self, Variant::LocationRisk | Variant::Combined)
    }

    fn drops_stationary(self) -> bool {
        matches!(self, Variant::NonStationary | Variant::Combined)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s.trim())
            .ok_or_else(|| format!("unknown variant {s:?} (expected baseline, location_risk, non_stationary or combined)"))
    }
}

/// Training weight of one example under `variant`.
///
/// Location variants use the heatmap weight at the current position; the
/// stationary variants zero out vehicles whose whole track was parked.
pub fn compute_example_weight(example: &PredictionExample, heatmap: &RiskHeatmap, variant: Variant) -> f64 {
    let location = if variant.uses_location() {
        heatmap.lookup_weight(example.current_position)
    } else {
        1.0
    };
    let motion = if variant.drops_stationary()
        && example.agent_class == AgentClass::Vehicle
        && example.whole_track_stationary
    {
        0.0
    } else {
        1.0
    };
    location * motion
}
