//! JSON checkpoints: network spec, schedule, parameters and optimizer state.
//!
//! Floats are written with shortest round-trip formatting, so a save/load
//! cycle reproduces every `f64` parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::nn::{Denoiser, NetworkSpec};
use crate::optim::{AdamConfig, AdamState};
use crate::scalar::Scalar;
use crate::sde::ScheduleParams;
use crate::tensor::{Shape, Tensor};

pub const FORMAT: &str = "c2fdiff-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    /// `[n, c, h, w]`.
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub network: NetworkSpec,
    pub schedule: ScheduleParams,
    /// Completed training iterations.
    pub iteration: u64,
    pub seed: u64,
    pub optimizer: AdamConfig,
    pub adam: AdamState,
    pub loss_weights: LossWeights,
    /// Raw `ρ` of learned weights (`λ = softplus(ρ)`), with their own moments.
    pub learned_weights: Option<LearnedWeightState>,
    /// Parameters in network construction order.
    pub tensors: Vec<NamedTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnedWeightState {
    pub rho: [f64; 3],
    pub adam: AdamState,
}

pub fn store_to_tensors<T: Scalar>(store: &ParamStore<T>) -> Vec<NamedTensor> {
    store
        .iter()
        .map(|(_, name, t)| NamedTensor {
            name: name.to_string(),
            shape: t.shape().dims(),
            data: t.data().iter().map(|v| v.to_f64_lossy()).collect(),
        })
        .collect()
}

pub fn tensors_to_store<T: Scalar>(tensors: &[NamedTensor]) -> Result<ParamStore<T>> {
    let mut store = ParamStore::new();
    for nt in tensors {
        let shape = Shape::from_dims(&nt.shape).expect("four dims");
        let data = nt.data.iter().map(|&v| T::lit(v)).collect();
        let t = Tensor::from_vec(shape, data)
            .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", nt.name)))?;
        store
            .add(nt.name.clone(), t)
            .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", nt.name)))?;
    }
    Ok(store)
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format {:?}",
                self.format
            )));
        }
        if self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                self.version
            )));
        }
        self.network.validate()?;
        self.schedule.build()?;
        Ok(())
    }

    pub fn denoiser<T: Scalar>(&self) -> Result<Denoiser<T>> {
        self.validate()?;
        Denoiser::with_params(self.network, tensors_to_store(&self.tensors)?)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
