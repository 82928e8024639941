use rand::Rng;

use super::Phase;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Inverted dropout: in training each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`. Identity in eval.
pub fn dropout<T: Real>(g: &mut Graph<T>, x: Var, rate: f64, phase: &mut Phase) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::contract(format!("dropout rate {rate} must lie in [0, 1)")));
    }
    match phase {
        Phase::Train(rng) if rate > 0.0 => {
            let keep = T::lit(1.0 / (1.0 - rate));
            let mask =
                (0..g.value(x).len()).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect();
            Ok(g.apply_mask(x, mask))
        }
        _ => Ok(x),
    }
}
