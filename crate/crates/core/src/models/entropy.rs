use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Boltzmann-Gibbs entropy of a softmax over hidden features:
/// `S = -k * sum_j alpha_j p_j ln p_j` with `p = softmax(h)`.
#[derive(Clone, Debug)]
pub struct EntropyLayer {
    pub k: ParamId,
    pub alpha: ParamId,
    pub width: usize,
}

impl EntropyLayer {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, width: usize, rng: &mut impl Rng) -> Result<Self> {
        if width < 2 {
            return Err(Error::contract("entropy layer needs at least two inputs"));
        }
        let k = T::lit(rng.random_range(0.8..1.2));
        Ok(EntropyLayer {
            k: store.weight(format!("{name}.k"), Tensor::scalar(k), true)?,
            alpha: store.weight(format!("{name}.alpha"), Tensor::new([width], vec![T::one(); width])?, true)?,
            width,
        })
    }

    /// `[B, n] -> [B, 1]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, h: Var) -> Result<Var> {
        let shape = g.shape(h).to_vec();
        if shape.len() != 2 || shape[1] != self.width {
            return Err(Error::dim(format!("entropy layer expects [B, {}], got {shape:?}", self.width)));
        }
        let p = g.softmax(h);
        let lp = g.log_softmax(h);
        let plp = g.mul(p, lp)?;
        let alpha = g.param(store, self.alpha);
        let weighted = g.mul(plp, alpha)?;
        let s = g.sum_last(weighted);
        let k = g.param(store, self.k);
        let s = g.mul(s, k)?;
        let s = g.scale(s, -T::one());
        g.reshape(s, &[shape[0], 1])
    }
}
