//! Layer graphs of the five variants. Parameter names are dotted paths whose
//! first segment is the audit block; everything under `classifier.` belongs
//! to the classifier optimizer group.

use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::entropy::EntropyLayer;
use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::nn::{dropout, BatchNorm1d, Conv1d, Dense, FeatureEmbedding, LayerNorm, Phase, PositionalTable};
use crate::param::ParamStore;
use crate::slice::FrozenSlice;
use crate::tensor::Real;

/// Dense -> activation -> LayerNorm, optionally followed by dropout.
#[derive(Clone, Debug)]
struct DenseLn {
    dense: Dense,
    norm: LayerNorm,
}

#[derive(Clone, Copy)]
enum Act {
    Relu,
    Gelu,
}

impl DenseLn {
    fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dense: &str,
        norm: &str,
        i: usize,
        o: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(DenseLn {
            dense: Dense::new(store, &format!("{prefix}.{dense}"), i, o, rng)?,
            norm: LayerNorm::new(store, &format!("{prefix}.{norm}"), o)?,
        })
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, act: Act) -> Result<Var> {
        let y = self.dense.forward(g, store, x)?;
        let y = match act {
            Act::Relu => g.relu(y),
            Act::Gelu => g.gelu(y),
        };
        self.norm.forward(g, store, y)
    }
}

/// Dense -> ReLU -> BatchNorm.
#[derive(Clone, Debug)]
struct DenseBn {
    dense: Dense,
    bn: BatchNorm1d,
}

impl DenseBn {
    fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        j: usize,
        i: usize,
        o: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(DenseBn {
            dense: Dense::new(store, &format!("{prefix}.fc{j}"), i, o, rng)?,
            bn: BatchNorm1d::new(store, &format!("{prefix}.bn{j}"), o)?,
        })
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, phase: &Phase) -> Result<Var> {
        let y = self.dense.forward(g, store, x)?;
        let y = g.relu(y);
        self.bn.forward(g, store, y, phase)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct InternalWorld {
    chunk: usize,
    branches: Vec<[DenseLn; 2]>,
    cross_ffn: Vec<DenseLn>,
    projection: DenseLn,
    classifier: Vec<DenseLn>,
    out: Dense,
    hidden: usize,
    ffn_dropout: f64,
    ffn_dropout_every_layer: bool,
    classifier_dropout: f64,
}

impl InternalWorld {
    fn new<T: Real>(store: &mut ParamStore<T>, c: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let chunk = c.input_dim / c.branches;
        let branches = (0..c.branches)
            .map(|i| {
                let p = format!("branches.{i}");
                Ok([
                    DenseLn::new(store, &p, "fc1", "norm1", chunk, c.branch_hidden, rng)?,
                    DenseLn::new(store, &p, "fc2", "norm2", c.branch_hidden, c.branch_out, rng)?,
                ])
            })
            .collect::<Result<_>>()?;
        let cross_ffn = (0..c.ffn_layers)
            .map(|j| DenseLn::new(store, &format!("cross_ffn.{j}"), "dense", "norm", c.hidden, c.hidden, rng))
            .collect::<Result<_>>()?;
        let projection = DenseLn::new(store, "projection", "dense", "norm", c.hidden, c.hidden, rng)?;
        let mut width = c.hidden;
        let mut classifier = Vec::new();
        for (j, &w) in c.classifier_widths.iter().enumerate() {
            classifier.push(DenseLn::new(
                store,
                "classifier",
                &format!("fc{}", j + 1),
                &format!("norm{}", j + 1),
                width,
                w,
                rng,
            )?);
            width = w;
        }
        let out = Dense::new(store, "classifier.out", width, 1, rng)?;
        Ok(InternalWorld {
            chunk,
            branches,
            cross_ffn,
            projection,
            classifier,
            out,
            hidden: c.hidden,
            ffn_dropout: c.ffn_dropout,
            ffn_dropout_every_layer: c.ffn_dropout_every_layer,
            classifier_dropout: c.classifier_dropout,
        })
    }

    fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        slice: &FrozenSlice<T>,
        x: Var,
        phase: &mut Phase,
    ) -> Result<Var> {
        let batch = g.shape(x)[0];
        let mut parts = Vec::with_capacity(self.branches.len());
        for (i, [a, b]) in self.branches.iter().enumerate() {
            let xi = g.slice_last(x, i * self.chunk, self.chunk)?;
            let h = a.forward(g, store, xi, Act::Relu)?;
            parts.push(b.forward(g, store, h, Act::Relu)?);
        }
        let mut h = g.concat(&parts)?;
        let n = self.cross_ffn.len();
        for (j, layer) in self.cross_ffn.iter().enumerate() {
            h = layer.forward(g, store, h, Act::Gelu)?;
            if self.ffn_dropout_every_layer || j + 1 == n {
                h = dropout(g, h, self.ffn_dropout, phase)?;
            }
        }
        h = self.projection.forward(g, store, h, Act::Gelu)?;
        let seq = g.reshape(h, &[batch, 1, self.hidden])?;
        let seq = slice.forward(g, seq)?;
        h = g.reshape(seq, &[batch, self.hidden])?;
        for layer in &self.classifier {
            h = layer.forward(g, store, h, Act::Relu)?;
            h = dropout(g, h, self.classifier_dropout, phase)?;
        }
        self.out.forward(g, store, h)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Ffn3l {
    layers: Vec<DenseBn>,
    out: Dense,
    dropout: f64,
}

impl Ffn3l {
    fn new<T: Real>(store: &mut ParamStore<T>, c: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut width = c.input_dim;
        let mut layers = Vec::new();
        for (j, &w) in c.ffn3l_widths.iter().enumerate() {
            layers.push(DenseBn::new(store, "features", j + 1, width, w, rng)?);
            width = w;
        }
        let out = Dense::new(store, "classifier.out", width, 1, rng)?;
        Ok(Ffn3l { layers, out, dropout: c.ffn3l_dropout })
    }

    /// Every hidden layer but the last is followed by dropout.
    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, phase: &mut Phase) -> Result<Var> {
        let mut h = x;
        let n = self.layers.len();
        for (j, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h, phase)?;
            if j + 1 < n {
                h = dropout(g, h, self.dropout, phase)?;
            }
        }
        self.out.forward(g, store, h)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Cnn1d {
    convs: Vec<(Conv1d, BatchNorm1d)>,
    fc: DenseBn,
    out: Dense,
    flat: usize,
    dropout: f64,
}

impl Cnn1d {
    fn new<T: Real>(store: &mut ParamStore<T>, c: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut cin = 1;
        let mut convs = Vec::new();
        for (j, &co) in c.cnn_channels.iter().enumerate() {
            let conv = Conv1d::new(store, &format!("features.conv{}", j + 1), cin, co, c.cnn_kernel, rng)?;
            let bn = BatchNorm1d::new(store, &format!("features.bn{}", j + 1), co)?;
            convs.push((conv, bn));
            cin = co;
        }
        let flat = cin * c.input_dim;
        let fc = DenseBn {
            dense: Dense::new(store, "classifier.fc", flat, c.cnn_dense, rng)?,
            bn: BatchNorm1d::new(store, "classifier.bn", c.cnn_dense)?,
        };
        let out = Dense::new(store, "classifier.out", c.cnn_dense, 1, rng)?;
        Ok(Cnn1d { convs, fc, out, flat, dropout: c.cnn_dropout })
    }

    #[cfg(test)]
    pub(crate) fn flatten_width(&self) -> usize {
        self.flat
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, phase: &mut Phase) -> Result<Var> {
        let (b, d) = (g.shape(x)[0], g.shape(x)[1]);
        let mut h = g.reshape(x, &[b, 1, d])?;
        for (conv, bn) in &self.convs {
            h = conv.forward(g, store, h)?;
            h = g.relu(h);
            h = bn.forward(g, store, h, phase)?;
        }
        h = g.reshape(h, &[b, self.flat])?;
        h = self.fc.forward(g, store, h, phase)?;
        h = dropout(g, h, self.dropout, phase)?;
        self.out.forward(g, store, h)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct PeMlp {
    embedding: FeatureEmbedding,
    positional: PositionalTable,
    norm: LayerNorm,
    out: Dense,
    flat: usize,
    dropout: f64,
}

impl PeMlp {
    fn new<T: Real>(store: &mut ParamStore<T>, c: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let flat = c.input_dim * c.pe_width;
        Ok(PeMlp {
            embedding: FeatureEmbedding::new(store, "embedding", c.input_dim, c.pe_width, rng)?,
            positional: PositionalTable::new(store, "embedding.positional", c.input_dim, c.pe_width, rng)?,
            norm: LayerNorm::new(store, "embedding.norm", c.pe_width)?,
            out: Dense::new(store, "classifier.out", flat, 1, rng)?,
            flat,
            dropout: c.pe_dropout,
        })
    }

    #[cfg(test)]
    pub(crate) fn flatten_width(&self) -> usize {
        self.flat
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, phase: &mut Phase) -> Result<Var> {
        let b = g.shape(x)[0];
        let e = self.embedding.forward(g, store, x)?;
        let e = self.positional.forward(g, store, e)?;
        let e = self.norm.forward(g, store, e)?;
        let e = dropout(g, e, self.dropout, phase)?;
        let flat = g.reshape(e, &[b, self.flat])?;
        self.out.forward(g, store, flat)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct PhysEntropy {
    trunk: Vec<DenseBn>,
    entropy: EntropyLayer,
    branch: Vec<Dense>,
    res_in: Dense,
    residual: Vec<Dense>,
    out: Dense,
    dropout: f64,
}

impl PhysEntropy {
    fn new<T: Real>(store: &mut ParamStore<T>, c: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut width = c.input_dim;
        let mut trunk = Vec::new();
        for (j, &w) in c.entropy_trunk.iter().enumerate() {
            trunk.push(DenseBn::new(store, "trunk", j + 1, width, w, rng)?);
            width = w;
        }
        let trunk_out = width;
        let entropy = EntropyLayer::new(store, "entropy", trunk_out, rng)?;
        let mut width = c.input_dim;
        let mut branch = Vec::new();
        for (j, &w) in c.entropy_branch.iter().enumerate() {
            branch.push(Dense::new(store, &format!("branch.fc{}", j + 1), width, w, rng)?);
            width = w;
        }
        let r = c.entropy_residual;
        let res_in = Dense::new(store, "classifier.res_in", 1 + width, r, rng)?;
        let residual = (0..c.entropy_residual_blocks)
            .map(|j| Dense::new(store, &format!("classifier.res{}", j + 1), r, r, rng))
            .collect::<Result<_>>()?;
        let out = Dense::new(store, "classifier.out", trunk_out + r, 1, rng)?;
        Ok(PhysEntropy { trunk, entropy, branch, res_in, residual, out, dropout: c.entropy_dropout })
    }

    #[cfg(test)]
    pub(crate) fn final_width(&self) -> usize {
        self.out.input
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, phase: &mut Phase) -> Result<Var> {
        let mut t = x;
        for layer in &self.trunk {
            t = layer.forward(g, store, t, phase)?;
            t = dropout(g, t, self.dropout, phase)?;
        }
        let s = self.entropy.forward(g, store, t)?;
        let mut f = x;
        for layer in &self.branch {
            f = layer.forward(g, store, f)?;
            f = g.relu(f);
        }
        let sf = g.concat(&[s, f])?;
        let mut r = self.res_in.forward(g, store, sf)?;
        r = g.relu(r);
        for layer in &self.residual {
            let y = layer.forward(g, store, r)?;
            let y = g.relu(y);
            r = g.add(r, y)?;
        }
        let joined = g.concat(&[t, r])?;
        self.out.forward(g, store, joined)
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Arch {
    InternalWorld(InternalWorld),
    Ffn3l(Ffn3l),
    Cnn1d(Cnn1d),
    PeMlp(PeMlp),
    PhysEntropy(PhysEntropy),
}

impl Arch {
    pub(crate) fn build<T: Real>(store: &mut ParamStore<T>, c: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        use super::config::Variant::*;
        Ok(match c.variant {
            InternalWorld => Arch::InternalWorld(self::InternalWorld::new(store, c, rng)?),
            Ffn3l => Arch::Ffn3l(self::Ffn3l::new(store, c, rng)?),
            Cnn1d => Arch::Cnn1d(self::Cnn1d::new(store, c, rng)?),
            PeMlp => Arch::PeMlp(self::PeMlp::new(store, c, rng)?),
            PhysEntropy => Arch::PhysEntropy(self::PhysEntropy::new(store, c, rng)?),
        })
    }

    /// Pre-sigmoid output `[B, 1]`.
    pub(crate) fn logits<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        slice: Option<&FrozenSlice<T>>,
        x: Var,
        phase: &mut Phase,
    ) -> Result<Var> {
        match self {
            Arch::InternalWorld(m) => m.forward(g, store, slice.expect("internal-world model owns a slice"), x, phase),
            Arch::Ffn3l(m) => m.forward(g, store, x, phase),
            Arch::Cnn1d(m) => m.forward(g, store, x, phase),
            Arch::PeMlp(m) => m.forward(g, store, x, phase),
            Arch::PhysEntropy(m) => m.forward(g, store, x, phase),
        }
    }
}
