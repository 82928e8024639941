use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::init::{xavier_normal, XAVIER_GAIN};
use super::Phase;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Fully connected layer `y = x W + b` over the last dimension.
/// Weights are stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = xavier_normal(&[input, output], input, output, XAVIER_GAIN, rng);
        let weight = store.weight(format!("{name}.weight"), w, true)?;
        let bias = Some(store.weight(format!("{name}.bias"), Tensor::zeros([output]), true)?);
        Ok(Dense { weight, bias, input, output })
    }

    /// Bias-free projection whose weight is stored under `name` itself.
    pub fn projection<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        trainable: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = xavier_normal(&[input, output], input, output, XAVIER_GAIN, rng);
        let weight = store.weight(name, w, trainable)?;
        Ok(Dense { weight, bias: None, input, output })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.last() != Some(&self.input) {
            return Err(Error::dim(format!("dense layer expects last extent {}, got input {shape:?}", self.input)));
        }
        let rows = shape[..shape.len() - 1].iter().product::<usize>();
        let flat = if shape.len() == 2 { x } else { g.reshape(x, &[rows, self.input])? };
        let w = g.param(store, self.weight);
        let mut y = g.matmul(flat, w)?;
        if let Some(b) = self.bias {
            let bv = g.param(store, b);
            y = g.add(y, bv)?;
        }
        if shape.len() == 2 {
            Ok(y)
        } else {
            let mut out = shape;
            *out.last_mut().unwrap() = self.output;
            g.reshape(y, &out)
        }
    }
}

/// Layer normalization over the last dimension with learned scale/shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub weight: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, width: usize) -> Result<Self> {
        let ones = Tensor::new([width], vec![T::one(); width])?;
        let weight = store.weight(format!("{name}.weight"), ones, true)?;
        let bias = store.weight(format!("{name}.bias"), Tensor::zeros([width]), true)?;
        Ok(LayerNorm { weight, bias, eps: Self::EPS })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let width = store.get(self.weight).numel();
        if g.shape(x).last() != Some(&width) {
            return Err(Error::dim(format!("layer norm over {width} features got {:?}", g.shape(x))));
        }
        let n = g.layer_norm(x, T::lit(self.eps));
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.mul(n, w)?;
        g.add(y, b)
    }
}

/// Root-mean-square normalization with a zero-centred scale: the output is
/// multiplied by `1 + weight`, so a zero weight is the identity scale.
#[derive(Clone, Debug)]
pub struct RmsNorm {
    pub weight: ParamId,
    pub eps: f64,
}

impl RmsNorm {
    pub const EPS: f64 = 1e-6;

    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, width: usize, trainable: bool) -> Result<Self> {
        let weight = store.weight(name, Tensor::zeros([width]), trainable)?;
        Ok(RmsNorm { weight, eps: Self::EPS })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let n = g.rms_norm(x, T::lit(self.eps));
        let w = g.param(store, self.weight);
        let scale = g.add_scalar(w, T::one());
        g.mul(n, scale)
    }
}

/// Batch normalization over channel axis 1 of `[B, C]` or `[B, C, L]`.
#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        let ones = || Tensor::new([channels], vec![T::one(); channels]).expect("bn shape");
        Ok(BatchNorm1d {
            weight: store.weight(format!("{name}.weight"), ones(), true)?,
            bias: store.weight(format!("{name}.bias"), Tensor::zeros([channels]), true)?,
            running_mean: store.buffer(format!("{name}.running_mean"), Tensor::zeros([channels]))?,
            running_var: store.buffer(format!("{name}.running_var"), ones())?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    /// Training mode normalizes with batch statistics and records the
    /// running-statistic update on the tape; eval mode uses stored statistics.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, phase: &Phase) -> Result<Var> {
        let gamma = g.param(store, self.weight);
        let beta = g.param(store, self.bias);
        let eps = T::lit(self.eps);
        if phase.is_train() {
            let shape = g.shape(x);
            let count = shape[0] * shape.get(2).copied().unwrap_or(1);
            let (y, mean, var) = g.batch_norm(x, gamma, beta, None, eps)?;
            let m = T::lit(self.momentum);
            let keep = T::one() - m;
            let unbias = if count > 1 { T::lit(count as f64 / (count as f64 - 1.0)) } else { T::one() };
            let rm: Vec<T> =
                store.get(self.running_mean).values().iter().zip(&mean).map(|(&r, &b)| keep * r + m * b).collect();
            let rv: Vec<T> = store
                .get(self.running_var)
                .values()
                .iter()
                .zip(&var)
                .map(|(&r, &b)| keep * r + m * b * unbias)
                .collect();
            g.record_buffer_update(store, self.running_mean, rm);
            g.record_buffer_update(store, self.running_var, rv);
            Ok(y)
        } else {
            let rm = store.get(self.running_mean).values();
            let rv = store.get(self.running_var).values();
            Ok(g.batch_norm(x, gamma, beta, Some((rm, rv)), eps)?.0)
        }
    }
}

/// Length-preserving 1-D cross-correlation (odd kernel, `pad = k / 2`).
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::contract(format!("conv1d kernel extent {kernel} must be odd")));
        }
        let w = xavier_normal(
            &[out_channels, in_channels, kernel],
            in_channels * kernel,
            out_channels * kernel,
            XAVIER_GAIN,
            rng,
        );
        Ok(Conv1d {
            weight: store.weight(format!("{name}.weight"), w, true)?,
            bias: store.weight(format!("{name}.bias"), Tensor::zeros([out_channels]), true)?,
            in_channels,
            out_channels,
            kernel,
        })
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv1d(x, w, b, self.padding())
    }
}

/// One learned affine map `1 -> width` per input feature:
/// `out[b, f, :] = x[b, f] * W[f, :] + c[f, :]`.
#[derive(Clone, Debug)]
pub struct FeatureEmbedding {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl FeatureEmbedding {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        features: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = xavier_normal(&[features, width], 1, width, XAVIER_GAIN, rng);
        Ok(FeatureEmbedding {
            weight: store.weight(format!("{name}.weight"), w, true)?,
            bias: store.weight(format!("{name}.bias"), Tensor::zeros([features, width]), true)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let e = g.feature_embed(x, w)?;
        let b = g.param(store, self.bias);
        g.add(e, b)
    }
}

/// Learned additive position table `[positions, width]`.
#[derive(Clone, Debug)]
pub struct PositionalTable {
    pub table: ParamId,
}

impl PositionalTable {
    pub const INIT_STD: f64 = 0.02;

    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        positions: usize,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let dist = Normal::new(0.0, Self::INIT_STD).expect("positive std");
        let data = (0..positions * width).map(|_| T::lit(dist.sample(rng))).collect();
        Ok(PositionalTable { table: store.weight(name, Tensor::new([positions, width], data)?, true)? })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let t = g.param(store, self.table);
        g.add(x, t)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::fdcheck::max_rel_error;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn dense_bias_only_and_identity() {
        let mut store = ParamStore::<f64>::new();
        let d = Dense::new(&mut store, "d", 2, 2, &mut rng()).unwrap();
        store.set_values(d.weight, &[0.0; 4]).unwrap();
        store.set_values(d.bias.unwrap(), &[1.0, 1.0]).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new([3, 2], vec![5.0, -2.0, 0.3, 9.0, 1.0, 1.0]).unwrap());
        let y = d.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y), &[1.0; 6]);

        store.set_values(d.weight, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        store.set_values(d.bias.unwrap(), &[0.0, 0.0]).unwrap();
        let x = g.constant(Tensor::new([1, 2], vec![1.0, 2.0]).unwrap());
        let y = d.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y), &[1.0, 2.0]);
    }

    #[test]
    fn dense_rejects_wrong_width() {
        let mut store = ParamStore::<f32>::new();
        let d = Dense::new(&mut store, "d", 3, 2, &mut rng()).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([1, 4]));
        assert!(matches!(d.forward(&mut g, &store, x), Err(Error::Dimension(_))));
    }

    #[test]
    fn dense_grad_flows_to_weight_and_bias() {
        let mut store = ParamStore::<f64>::new();
        let d = Dense::new(&mut store, "d", 3, 2, &mut rng()).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new([2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap());
        let y = d.forward(&mut g, &store, x).unwrap();
        let l = g.sum(y);
        g.backward(l, &mut store).unwrap();
        assert_eq!(store.get(d.bias.unwrap()).grad().unwrap(), &[2.0, 2.0]);
        assert_eq!(store.get(d.weight).grad().unwrap(), &[0.0, 0.0, 2.5, 2.5, 3.0, 3.0]);
    }

    #[test]
    fn layer_norm_examples() {
        let mut store = ParamStore::<f64>::new();
        let ln = LayerNorm::new(&mut store, "ln", 4).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new([1, 4], vec![5.0; 4]).unwrap());
        let y = ln.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y), &[0.0; 4]);

        let ln2 = LayerNorm::new(&mut store, "ln2", 2).unwrap();
        let x = g.constant(Tensor::new([1, 2], vec![1.0, 3.0]).unwrap());
        let y = ln2.forward(&mut g, &store, x).unwrap();
        assert!((g.value(y)[0] + 1.0).abs() < 1e-5 && (g.value(y)[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_gradient_on_3x4() {
        let mut r = rng();
        let x = crate::autodiff::fdcheck::random_tensor(&mut r, &[3, 4], -2.0, 2.0);
        let err = max_rel_error(&[x], 1, |g, v| Ok(g.layer_norm(v[0], 1e-5)));
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn conv_delta_kernel_and_hand_example() {
        let mut store = ParamStore::<f64>::new();
        let c = Conv1d::new(&mut store, "c", 1, 1, 3, &mut rng()).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new([1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        store.set_values(c.weight, &[0.0, 1.0, 0.0]).unwrap();
        let y = c.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y), &[1.0, 2.0, 3.0]);
        store.set_values(c.weight, &[1.0, 1.0, 1.0]).unwrap();
        let y = c.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn conv_channel_mismatch_and_flatten_width() {
        let mut store = ParamStore::<f32>::new();
        let c = Conv1d::new(&mut store, "c", 2, 64, 3, &mut rng()).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([1, 1, 276]));
        assert!(matches!(c.forward(&mut g, &store, x), Err(Error::Dimension(_))));
        let x = g.constant(Tensor::zeros([1, 2, 276]));
        let y = c.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(y), &[1, 64, 276]);
        assert_eq!(g.value(y).len(), 17664);
        assert!(Conv1d::new(&mut store, "even", 1, 1, 2, &mut rng()).is_err());
    }

    #[test]
    fn batch_norm_modes() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm1d::new(&mut store, "bn", 2).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new([2, 2], vec![1.0, 10.0, 3.0, 30.0]).unwrap());
        let mut r = rng();
        let y = bn.forward(&mut g, &store, x, &Phase::Train(&mut r)).unwrap();
        let v = g.value(y);
        assert!((v[0] + 1.0).abs() < 1e-4 && (v[2] - 1.0).abs() < 1e-4);
        let updates = g.take_buffer_updates();
        assert_eq!(updates.len(), 2);
        store.apply_buffer_updates(updates).unwrap();
        // running mean 0.9*0 + 0.1*[2, 20]; running var 0.9*1 + 0.1*unbiased [2, 200]
        let rm = store.get(bn.running_mean).values();
        assert!((rm[0] - 0.2).abs() < 1e-12 && (rm[1] - 2.0).abs() < 1e-12);
        let rv = store.get(bn.running_var).values();
        assert!((rv[0] - 1.1).abs() < 1e-12 && (rv[1] - 20.9).abs() < 1e-12);

        // eval output of a row does not depend on the rest of the batch
        let mut g = Graph::new();
        let a = g.constant(Tensor::new([1, 2], vec![1.0, 10.0]).unwrap());
        let b = g.constant(Tensor::new([3, 2], vec![1.0, 10.0, -5.0, 3.0, 7.0, 7.0]).unwrap());
        let ya = bn.forward(&mut g, &store, a, &Phase::Eval).unwrap();
        let yb = bn.forward(&mut g, &store, b, &Phase::Eval).unwrap();
        assert_eq!(g.value(ya), &g.value(yb)[..2]);
        assert!(g.take_buffer_updates().is_empty());
    }

    #[test]
    fn rms_norm_zero_weight_is_unit_scale() {
        let mut store = ParamStore::<f64>::new();
        let n = RmsNorm::new(&mut store, "n", 2, false).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new([1, 2], vec![3.0, 4.0]).unwrap());
        let y = n.forward(&mut g, &store, x).unwrap();
        let rms = (12.5f64 + 1e-6).sqrt();
        assert!((g.value(y)[0] - 3.0 / rms).abs() < 1e-12);
    }

    #[test]
    fn embedding_shapes() {
        let mut store = ParamStore::<f32>::new();
        let e = FeatureEmbedding::new(&mut store, "e", 276, 32, &mut rng()).unwrap();
        let p = PositionalTable::new(&mut store, "p", 276, 32, &mut rng()).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([2, 276]));
        let y = e.forward(&mut g, &store, x).unwrap();
        let y = p.forward(&mut g, &store, y).unwrap();
        assert_eq!(g.shape(y), &[2, 276, 32]);
        assert_eq!(g.value(y).len() / 2, 8832);
    }
}
