//! JSON checkpoints of a policy network and its optimizer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, NetParams, NetSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitDescriptor {
    pub scheme: String,
    pub seed: u64,
}

impl InitDescriptor {
    pub fn standard(seed: u64) -> Self {
        Self {
            scheme: "he_uniform_hidden/uniform_inv_sqrt_fan_in_output_and_gru/zero_dense_bias".into(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Everything needed to resume or evaluate a policy.
///
/// Floats are written in shortest round-trip form, so a reload reproduces
/// every parameter bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: NetSpec,
    pub init: InitDescriptor,
    pub seed: u64,
    pub params: Vec<NamedTensor>,
    pub adam: AdamState,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn new(spec: &NetSpec, params: &NetParams, adam: &AdamState, init: InitDescriptor, seed: u64, config_hash: &str) -> Self {
        Self {
            spec: spec.clone(),
            init,
            seed,
            params: params
                .named_tensors()
                .into_iter()
                .map(|(name, shape, data)| NamedTensor {
                    name,
                    shape,
                    data: data.to_vec(),
                })
                .collect(),
            adam: adam.clone(),
            config_hash: config_hash.to_string(),
        }
    }

    pub fn net_params(&self) -> Result<NetParams> {
        self.spec.validate()?;
        let mut params = NetParams::zeros(&self.spec);
        let expected = params.named_tensors();
        if expected.len() != self.params.len() {
            return Err(Error::Shape("checkpoint tensor list does not match the network".into()));
        }
        for ((name, shape, _), t) in expected.iter().zip(&self.params) {
            if *name != t.name || *shape != t.shape {
                return Err(Error::Shape(format!(
                    "checkpoint tensor {} {:?} where {} {:?} was expected",
                    t.name, t.shape, name, shape
                )));
            }
        }
        for (dst, t) in params.tensors_mut().into_iter().zip(&self.params) {
            if dst.len() != t.data.len() {
                return Err(Error::Shape(format!("tensor {} has the wrong length", t.name)));
            }
            dst.copy_from_slice(&t.data);
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
