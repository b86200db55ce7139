use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelParams, ModelShape};
use super::train::{TrainConfig, TrainOutcome};
use crate::dataset::ModelClass;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSet {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Serialized trained model for one (agent class, variant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub agent_class: ModelClass,
    pub config: TrainConfig,
    pub seed: u64,
    pub shape: ModelShape,
    pub scale: f64,
    pub tensors: TensorSet,
    pub loss_history: Vec<f64>,
    pub examples_used: usize,
    pub effective_examples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn new(agent_class: ModelClass, config: &TrainConfig, outcome: &TrainOutcome) -> Self {
        let m = &outcome.model;
        let s = m.shape;
        let t = m.tensors();
        let tensor = |shape: Vec<usize>, data: &[f64]| Tensor {
            shape,
            data: data.to_vec(),
        };
        Checkpoint {
            agent_class,
            config: config.clone(),
            seed: config.seed,
            shape: s,
            scale: m.scale,
            tensors: TensorSet {
                w1: tensor(vec![s.hidden, s.input], t.w1),
                b1: tensor(vec![s.hidden], t.b1),
                w2: tensor(vec![s.output(), s.hidden], t.w2),
                b2: tensor(vec![s.output()], t.b2),
            },
            loss_history: outcome.loss_history.clone(),
            examples_used: outcome.examples_used,
            effective_examples: outcome.effective_examples,
            provenance: None,
        }
    }

    pub fn model(&self) -> Result<ModelParams> {
        let t = &self.tensors;
        let mut params = Vec::with_capacity(self.shape.param_count());
        for tensor in [&t.w1, &t.b1, &t.w2, &t.b2] {
            if tensor.shape.iter().product::<usize>() != tensor.data.len() {
                return Err(Error::Config("checkpoint tensor shape does not match its data".into()));
            }
            params.extend_from_slice(&tensor.data);
        }
        let model = ModelParams {
            shape: self.shape,
            scale: self.scale,
            params,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}
