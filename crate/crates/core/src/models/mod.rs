//! The internal-world model and four baselines behind one interface.

mod arch;
mod audit;
mod config;
mod entropy;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use audit::{BlockAudit, ParameterAudit};
pub use config::{ModelConfig, Variant};
pub use entropy::EntropyLayer;

use crate::archive::NamedTensorArchive;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::Phase;
use crate::param::ParamStore;
use crate::slice::{FrozenSlice, Provenance};
use crate::tensor::{Real, Tensor};
use arch::Arch;

/// Probabilities are kept this far from 0 and 1.
pub const PROB_EPS: f64 = 1e-7;

const MODEL_PREFIX: &str = "model.";
const SLICE_PREFIX: &str = "slice.";

#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    config: ModelConfig,
    store: ParamStore<T>,
    arch: Arch,
    slice: Option<FrozenSlice<T>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    config: ModelConfig,
    slice_provenance: Option<Provenance>,
}

impl<T: Real> Model<T> {
    /// Builds the model with seeded initialization. The internal-world
    /// variant gets a random-seeded frozen slice.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let slice = match config.variant {
            Variant::InternalWorld => Some(FrozenSlice::random(&config.slice, config.slice_seed)?),
            _ => None,
        };
        Self::assemble(config, slice)
    }

    /// Builds an internal-world model around an existing slice.
    pub fn with_slice(config: &ModelConfig, slice: FrozenSlice<T>) -> Result<Self> {
        config.validate()?;
        if config.variant != Variant::InternalWorld {
            return Err(Error::contract(format!("variant {} has no frozen slice", config.variant)));
        }
        if *slice.config() != config.slice {
            return Err(Error::dim("slice configuration does not match the model configuration"));
        }
        Self::assemble(config, Some(slice))
    }

    fn assemble(config: &ModelConfig, slice: Option<FrozenSlice<T>>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let arch = Arch::build(&mut store, config, &mut rng)?;
        Ok(Model { config: config.clone(), store, arch, slice })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn slice(&self) -> Option<&FrozenSlice<T>> {
        self.slice.as_ref()
    }

    /// Whether a parameter belongs to the classifier optimizer group.
    pub fn is_classifier(name: &str) -> bool {
        name.starts_with("classifier.")
    }

    /// Pre-sigmoid scores `[B, 1]`.
    pub fn logits(&self, g: &mut Graph<T>, x: Var, phase: &mut Phase) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.config.input_dim {
            return Err(Error::dim(format!(
                "{} expects input [B, {}], got {shape:?}",
                self.config.variant, self.config.input_dim
            )));
        }
        self.arch.logits(g, &self.store, self.slice.as_ref(), x, phase)
    }

    /// Probabilities `[B]`, clamped to `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, phase: &mut Phase) -> Result<Var> {
        let z = self.logits(g, x, phase)?;
        let b = g.shape(z)[0];
        let p = g.sigmoid(z);
        let p = g.clamp(p, T::lit(PROB_EPS), T::lit(1.0 - PROB_EPS));
        g.reshape(p, &[b])
    }

    /// Eval-mode probabilities for the rows of `x` (`[N, d]`), scored in
    /// independent chunks of `batch` rows. Chunks run on the rayon pool when
    /// the `parallel` feature is on.
    pub fn predict(&self, x: &Tensor<T>, batch: usize) -> Result<Vec<T>> {
        let d = self.config.input_dim;
        if x.shape().len() != 2 || x.shape()[1] != d {
            return Err(Error::dim(format!("predict expects [N, {d}], got {:?}", x.shape())));
        }
        let chunks: Vec<&[T]> = x.data().chunks(batch.max(1) * d).collect();
        let score = |rows: &&[T]| -> Result<Vec<T>> {
            let mut g = Graph::new();
            let xv = g.constant(Tensor::new([rows.len() / d, d], rows.to_vec())?);
            let p = self.forward(&mut g, xv, &mut Phase::Eval)?;
            Ok(g.value(p).to_vec())
        };
        #[cfg(feature = "parallel")]
        let parts: Vec<Result<Vec<T>>> = {
            use rayon::prelude::*;
            chunks.par_iter().map(score).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let parts: Vec<Result<Vec<T>>> = chunks.iter().map(score).collect();
        let mut out = Vec::with_capacity(x.shape()[0]);
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    pub fn audit(&self) -> ParameterAudit {
        let frozen = self.slice.iter().flat_map(|s| s.store().iter().map(|(_, p)| p));
        audit::audit(&self.config, self.store.iter().map(|(_, p)| p), "slice", frozen)
    }

    /// Parameters and buffers under `model.`, slice tensors under `slice.`.
    pub fn to_archive(&self) -> Result<NamedTensorArchive> {
        let mut a = NamedTensorArchive::new();
        a.push_store(MODEL_PREFIX, &self.store)?;
        if let Some(s) = &self.slice {
            a.push_store(SLICE_PREFIX, s.store())?;
        }
        Ok(a)
    }

    pub fn from_archive(config: &ModelConfig, archive: &NamedTensorArchive) -> Result<Self> {
        let mut m = match config.variant {
            Variant::InternalWorld => {
                let slice = FrozenSlice::load_prefixed(archive, SLICE_PREFIX, &config.slice)?;
                Self::with_slice(config, slice)?
            }
            _ => {
                if archive.names().any(|n| n.starts_with(SLICE_PREFIX)) {
                    return Err(Error::Manifest(format!("variant {} has no slice tensors", config.variant)));
                }
                Self::new(config)?
            }
        };
        archive.load_into(MODEL_PREFIX, &mut m.store)?;
        Ok(m)
    }

    /// Writes `path` (tensor archive) and the JSON sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive()?.write(path)?;
        let sidecar = Sidecar {
            format_version: 1,
            config: self.config.clone(),
            slice_provenance: self.slice.as_ref().map(|s| s.provenance()),
        };
        let side = sidecar_path(path);
        std::fs::write(&side, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        Self::from_archive(&sidecar.config, &NamedTensorArchive::read(path)?)
    }
}

/// `model.nta` -> `model.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[cfg(test)]
mod tests;
