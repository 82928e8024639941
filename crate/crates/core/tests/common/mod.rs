//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use iworld::models::Model;
use iworld::nn::Phase;
use iworld::train::{loss, LossConfig};
use iworld::{Graph, Real, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Magnitudes in [0.1, 2) with random sign, keeping kinks out of reach of
/// the finite-difference step.
pub fn signed_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.1..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Norm-wise relative error `max|a - n| / max(max|a|, max|n|)`.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(1e-12, f64::max);
    diff / scale
}

/// Central-difference check of `f` with respect to each input. The output
/// is contracted with fixed random weights so every output entry matters.
/// Returns the worst relative error over inputs.
pub fn fd_inputs<F>(inputs: &[Tensor<f64>], seed: u64, f: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let build = |xs: &[Tensor<f64>], w: Option<&[f64]>| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars).expect("forward");
        let n = g.value(out).len();
        let weights = Tensor::new(g.shape(out).to_vec(), w.map(<[f64]>::to_vec).unwrap_or(vec![1.0; n])).unwrap();
        let wv = g.constant(weights);
        let prod = g.mul(out, wv).unwrap();
        let total = g.sum(prod);
        (g, vars, total, n)
    };
    let (_, _, _, n) = build(inputs, None);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (g, vars, total, _) = build(inputs, Some(&w));
    let grads = g.gradients(total).unwrap();
    let value = |xs: &[Tensor<f64>]| {
        let (g, _, t, _) = build(xs, Some(&w));
        g.value(t)[0]
    };
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(<[f64]>::to_vec).unwrap_or(vec![0.0; inputs[k].len()]);
        let numeric: Vec<f64> = (0..inputs[k].len())
            .map(|j| {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[j] += FD_STEP;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[j] -= FD_STEP;
                (value(&plus) - value(&minus)) / (2.0 * FD_STEP)
            })
            .collect();
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

fn model_loss(model: &Model<f64>, x: &Tensor<f64>, y: &[u8], dropout_seed: Option<u64>) -> (Graph<f64>, Var, Var) {
    let mut g = Graph::new();
    let xv = g.variable(x.clone());
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let mut phase = match rng.as_mut() {
        Some(r) => Phase::Train(r),
        None => Phase::Eval,
    };
    let p = model.forward(&mut g, xv, &mut phase).unwrap();
    let l = loss(&mut g, p, y, &LossConfig::default()).unwrap();
    (g, xv, l)
}

/// Finite-difference check of the training loss of `model` with respect
/// to its input and every trainable parameter entry. With a dropout seed
/// the training-mode forward is used with identical masks on every
/// evaluation. Returns the worst relative error over tensors.
pub fn fd_model(model: &mut Model<f64>, x: &Tensor<f64>, y: &[u8], dropout_seed: Option<u64>) -> f64 {
    model.store_mut().zero_grad();
    let (g, xv, l) = model_loss(model, x, y, dropout_seed);
    let input_grad = g.gradients(l).unwrap().get(xv).unwrap().to_vec();
    g.backward(l, model.store_mut()).unwrap();
    let at = |m: &Model<f64>, x: &Tensor<f64>| {
        let (g, _, l) = model_loss(m, x, y, dropout_seed);
        g.value(l)[0]
    };

    let numeric_input: Vec<f64> = (0..x.len())
        .map(|j| {
            let (mut plus, mut minus) = (x.clone(), x.clone());
            plus.data_mut()[j] += FD_STEP;
            minus.data_mut()[j] -= FD_STEP;
            (at(model, &plus) - at(model, &minus)) / (2.0 * FD_STEP)
        })
        .collect();
    let mut worst = rel_error(&input_grad, &numeric_input);

    for id in model.store().trainable_ids() {
        let analytic = model.store().get(id).grad().unwrap().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (j, n) in numeric.iter_mut().enumerate() {
            let orig = model.store().get(id).values()[j];
            model.store_mut().values_mut(id)[j] = orig + FD_STEP;
            let up = at(model, x);
            model.store_mut().values_mut(id)[j] = orig - FD_STEP;
            let down = at(model, x);
            model.store_mut().values_mut(id)[j] = orig;
            *n = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

pub fn to_f64<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

/// Brute-force binary metrics used as an oracle.
pub mod brute {
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct Counts {
        pub tp: usize,
        pub fp: usize,
        pub tn: usize,
        pub fn_: usize,
    }

    pub fn counts(scores: &[f64], labels: &[u8], t: f64) -> Counts {
        let mut c = Counts { tp: 0, fp: 0, tn: 0, fn_: 0 };
        for i in 0..scores.len() {
            let pred = scores[i] >= t;
            let pos = labels[i] == 1;
            if pred && pos {
                c.tp += 1
            } else if pred {
                c.fp += 1
            } else if pos {
                c.fn_ += 1
            } else {
                c.tn += 1
            }
        }
        c
    }

    pub fn div(a: usize, b: usize) -> f64 {
        if b == 0 {
            0.0
        } else {
            a as f64 / b as f64
        }
    }

    pub fn precision(c: Counts) -> f64 {
        div(c.tp, c.tp + c.fp)
    }

    pub fn recall(c: Counts) -> f64 {
        div(c.tp, c.tp + c.fn_)
    }

    pub fn f1(c: Counts) -> f64 {
        let (p, r) = (precision(c), recall(c));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Mann-Whitney statistic over all positive/negative pairs.
    pub fn auc(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    /// Every distinct score and every midpoint between neighbouring
    /// distinct scores, each evaluated from scratch; lowest maximizer wins.
    pub fn best_threshold(scores: &[f64], labels: &[u8]) -> (f64, f64) {
        let mut cands: Vec<f64> = Vec::new();
        for &a in scores {
            if !cands.contains(&a) {
                cands.push(a);
            }
            // Midpoint to the next larger distinct score, if any.
            if let Some(b) = scores.iter().copied().filter(|&b| b > a).min_by(f64::total_cmp) {
                let m = a + (b - a) / 2.0;
                if !cands.contains(&m) {
                    cands.push(m);
                }
            }
        }
        let mut best = (f64::INFINITY, -1.0);
        for t in cands {
            let f = f1(counts(scores, labels, t));
            // F1 values equal up to rounding count as ties.
            if f > best.1 + 1e-12 || ((f - best.1).abs() <= 1e-12 && t < best.0) {
                best = (t, f);
            }
        }
        best
    }
}
