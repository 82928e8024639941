use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` before the log.
pub const P_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    WeightedBce,
    BalancedFocal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Weight of the negative class.
    pub w0: f64,
    /// Weight of the positive class.
    pub w1: f64,
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { kind: LossKind::WeightedBce, w0: 1.0, w1: 2.0, gamma: 2.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if !(self.w0 > 0.0 && self.w1 > 0.0) {
            bad.push(format!("class weights must be positive, got w0={} w1={}", self.w0, self.w1));
        }
        if !(self.gamma >= 0.0) {
            bad.push(format!("focal gamma must be non-negative, got {}", self.gamma));
        }
        bad
    }
}

/// Mean class-weighted loss over the batch:
/// `-(1/B) sum [w1 y m(1-p) ln p + w0 (1-y) m(p) ln(1-p)]`, where the
/// modulating factor `m(q)` is 1 for cross-entropy and `q^gamma` for focal.
pub fn loss<T: Real>(g: &mut Graph<T>, p: Var, y: &[u8], cfg: &LossConfig) -> Result<Var> {
    let shape = g.shape(p).to_vec();
    if shape.len() != 1 || shape[0] != y.len() {
        return Err(Error::dim(format!("loss: predictions {shape:?} for {} labels", y.len())));
    }
    let b = y.len();
    let pc = g.clamp(p, T::lit(P_CLAMP), T::lit(1.0 - P_CLAMP));
    let q = g.scale(pc, -T::one());
    let q = g.add_scalar(q, T::one());
    let mut pos_term = g.log(pc)?;
    let mut neg_term = g.log(q)?;
    if cfg.kind == LossKind::BalancedFocal {
        let mq = g.powf(q, T::lit(cfg.gamma))?;
        let mp = g.powf(pc, T::lit(cfg.gamma))?;
        pos_term = g.mul(pos_term, mq)?;
        neg_term = g.mul(neg_term, mp)?;
    }
    let coef = |w: f64, target: u8| {
        Tensor::new([b], y.iter().map(|&v| if v == target { T::lit(-w / b as f64) } else { T::zero() }).collect())
    };
    let a = g.constant(coef(cfg.w1, 1)?);
    let c = g.constant(coef(cfg.w0, 0)?);
    let pos_term = g.mul(pos_term, a)?;
    let neg_term = g.mul(neg_term, c)?;
    let total = g.add(pos_term, neg_term)?;
    Ok(g.sum(total))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(p: &[f64], y: &[u8], cfg: &LossConfig) -> f64 {
        let mut g = Graph::<f64>::new();
        let pv = g.constant(Tensor::from_f64([p.len()], p).unwrap());
        let l = loss(&mut g, pv, y, cfg).unwrap();
        g.value(l)[0]
    }

    fn focal() -> LossConfig {
        LossConfig { kind: LossKind::BalancedFocal, ..Default::default() }
    }

    #[test]
    fn hand_examples() {
        let bce = LossConfig::default();
        assert!(eval(&[1.0], &[1], &bce).abs() < 1e-6);
        assert!((eval(&[0.5], &[1], &bce) - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((eval(&[0.5], &[1], &focal()) - 0.5 * 2f64.ln()).abs() < 1e-12);
        assert!((eval(&[0.5], &[0], &bce) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_formula() {
        let p = [0.1f64, 0.7, 0.99, 0.4, 0.0];
        let y = [0, 1, 1, 0, 1];
        for cfg in [LossConfig::default(), focal()] {
            let want: f64 = p
                .iter()
                .zip(&y)
                .map(|(&p, &y)| {
                    let p = p.clamp(1e-7, 1.0 - 1e-7);
                    let (mq, mp) = match cfg.kind {
                        LossKind::WeightedBce => (1.0, 1.0),
                        LossKind::BalancedFocal => ((1.0 - p).powf(2.0), p.powf(2.0)),
                    };
                    -(2.0 * y as f64 * mq * p.ln() + (1.0 - y as f64) * mp * (1.0 - p).ln())
                })
                .sum::<f64>()
                / 5.0;
            assert!((eval(&p, &y, &cfg) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let y = [0u8, 1, 1, 0];
        let p0 = [0.2, 0.6, 0.3, 0.9];
        for cfg in [LossConfig::default(), focal()] {
            let mut g = Graph::<f64>::new();
            let pv = g.variable(Tensor::from_f64([4], &p0).unwrap());
            let l = loss(&mut g, pv, &y, &cfg).unwrap();
            let grads = g.gradients(l).unwrap();
            let an = grads.get(pv).unwrap();
            for i in 0..4 {
                let mut up = p0;
                up[i] += 1e-6;
                let mut dn = p0;
                dn[i] -= 1e-6;
                let num = (eval(&up, &y, &cfg) - eval(&dn, &y, &cfg)) / 2e-6;
                assert!((an[i] - num).abs() < 1e-6 * num.abs().max(1.0), "{i}: {} vs {num}", an[i]);
            }
        }
    }

    #[test]
    fn length_mismatch_is_dimension_error() {
        let mut g = Graph::<f32>::new();
        let p = g.constant(Tensor::zeros([3]));
        assert!(matches!(loss(&mut g, p, &[1, 0], &LossConfig::default()), Err(Error::Dimension(_))));
    }
}
