//! Central finite-difference oracle used by gradient tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

pub const H: f64 = 1e-5;

/// Builds `f` on fresh variables, contracts its output with fixed random
/// weights and compares analytic input gradients with central differences.
/// Returns the worst norm-wise relative error across inputs.
pub fn max_rel_error<F>(inputs: &[Tensor<f64>], seed: u64, f: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |xs: &[Tensor<f64>], weights: Option<&[f64]>| -> (Graph<f64>, Vec<Var>, Var, Vec<f64>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars).expect("forward");
        let outv = g.value(out).to_vec();
        let w = match weights {
            Some(w) => Tensor::new(g.shape(out).to_vec(), w.to_vec()).unwrap(),
            None => Tensor::new(g.shape(out).to_vec(), vec![1.0; outv.len()]).unwrap(),
        };
        let wv = g.constant(w);
        let prod = g.mul(out, wv).unwrap();
        let loss = g.sum(prod);
        (g, vars, loss, outv)
    };
    let (_, _, _, probe) = eval(inputs, None);
    let weights: Vec<f64> = (0..probe.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (g, vars, loss, _) = eval(inputs, Some(&weights));
    let grads = g.gradients(loss).unwrap();
    let loss_at = |xs: &[Tensor<f64>]| {
        let (g, _, l, _) = eval(xs, Some(&weights));
        g.value(l)[0]
    };
    let mut worst: f64 = 0.0;
    for (idx, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; inputs[idx].len()]);
        let mut numeric = vec![0.0; inputs[idx].len()];
        for (j, n) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[idx].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[idx].data_mut()[j] -= H;
            *n = (loss_at(&plus) - loss_at(&minus)) / (2.0 * H);
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
        let scale = numeric.iter().chain(&analytic).map(|x| x.abs()).fold(1e-8, f64::max);
        worst = worst.max(diff / scale);
    }
    worst
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero (for kinked primitives).
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}
