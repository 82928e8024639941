//! Frozen decoder slice: pre/post RMS-normalized grouped-query attention and
//! gated feed-forward blocks whose weights never train.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::NamedTensorArchive;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Dense, RmsNorm};
use crate::param::ParamStore;
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderBlockConfig {
    pub hidden: usize,
    pub heads: usize,
    pub kv_heads: usize,
    pub head_dim: usize,
    pub ffn_inner: usize,
    pub rms_eps: f64,
    pub block_count: usize,
}

impl Default for DecoderBlockConfig {
    fn default() -> Self {
        DecoderBlockConfig {
            hidden: 1152,
            heads: 8,
            kv_heads: 2,
            head_dim: 144,
            ffn_inner: 1152,
            rms_eps: 1e-6,
            block_count: 2,
        }
    }
}

impl DecoderBlockConfig {
    /// Four-wide single block, small enough for finite-difference checks.
    pub fn toy() -> Self {
        DecoderBlockConfig {
            hidden: 4,
            heads: 2,
            kv_heads: 1,
            head_dim: 2,
            ffn_inner: 4,
            rms_eps: 1e-6,
            block_count: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.heads * self.head_dim != self.hidden || self.hidden == 0 {
            bad.push(format!(
                "heads ({}) x head_dim ({}) must equal hidden ({})",
                self.heads, self.head_dim, self.hidden
            ));
        }
        if self.kv_heads == 0 || !self.heads.is_multiple_of(self.kv_heads) {
            bad.push(format!("heads ({}) must be divisible by kv_heads ({})", self.heads, self.kv_heads));
        }
        if self.block_count == 0 {
            bad.push("block_count must be at least 1".into());
        }
        if self.ffn_inner == 0 {
            bad.push("ffn_inner must be positive".into());
        }
        if !(self.rms_eps > 0.0) {
            bad.push("rms_eps must be positive".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    pub fn kv_width(&self) -> usize {
        self.kv_heads * self.head_dim
    }
}

/// Analytic scalar count of the slice.
pub fn count_slice_parameters(cfg: &DecoderBlockConfig) -> usize {
    let h = cfg.hidden;
    let per_block = 2 * h * h + 2 * h * cfg.kv_width() + 3 * h * cfg.ffn_inner + 4 * h;
    per_block * cfg.block_count
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    RandomSeeded { seed: u64 },
    Imported,
}

#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub input_norm: RmsNorm,
    pub q: Dense,
    pub k: Dense,
    pub v: Dense,
    pub o: Dense,
    pub post_attn_norm: RmsNorm,
    pub pre_ffn_norm: RmsNorm,
    pub gate: Dense,
    pub up: Dense,
    pub down: Dense,
    pub post_ffn_norm: RmsNorm,
}

impl DecoderBlock {
    fn new<T: Real>(
        store: &mut ParamStore<T>,
        i: usize,
        cfg: &DecoderBlockConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let (h, kv, inner) = (cfg.hidden, cfg.kv_width(), cfg.ffn_inner);
        let p = |store: &mut ParamStore<T>, name: &str, a: usize, b: usize, rng: &mut ChaCha8Rng| {
            Dense::projection(store, &format!("block{i}.{name}"), a, b, false, rng)
        };
        let n = |store: &mut ParamStore<T>, name: &str| -> Result<RmsNorm> {
            let mut norm = RmsNorm::new(store, &format!("block{i}.norm.{name}"), h, false)?;
            norm.eps = cfg.rms_eps;
            Ok(norm)
        };
        Ok(DecoderBlock {
            input_norm: n(store, "input")?,
            q: p(store, "attn.q", h, h, rng)?,
            k: p(store, "attn.k", h, kv, rng)?,
            v: p(store, "attn.v", h, kv, rng)?,
            o: p(store, "attn.o", h, h, rng)?,
            post_attn_norm: n(store, "post_attn")?,
            pre_ffn_norm: n(store, "pre_ffn")?,
            gate: p(store, "mlp.gate", h, inner, rng)?,
            up: p(store, "mlp.up", h, inner, rng)?,
            down: p(store, "mlp.down", inner, h, rng)?,
            post_ffn_norm: n(store, "post_ffn")?,
        })
    }
}

/// `h + PostNorm(Attn(Norm(h)))`, then `+ PostNorm(down(gelu(gate x) * up x))`
/// on the pre-normed residual stream. Input is `[B, S, H]`.
pub fn decoder_block_forward<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    block: &DecoderBlock,
    cfg: &DecoderBlockConfig,
    h: Var,
) -> Result<Var> {
    let shape = g.shape(h).to_vec();
    if shape.len() != 3 || shape[2] != cfg.hidden {
        return Err(Error::dim(format!("decoder block expects [B, S, {}], got {shape:?}", cfg.hidden)));
    }
    let x = block.input_norm.forward(g, store, h)?;
    let q = block.q.forward(g, store, x)?;
    let k = block.k.forward(g, store, x)?;
    let v = block.v.forward(g, store, x)?;
    let a = g.attention(q, k, v, cfg.heads, cfg.kv_heads)?;
    let a = block.o.forward(g, store, a)?;
    let a = block.post_attn_norm.forward(g, store, a)?;
    let h = g.add(h, a)?;

    let x = block.pre_ffn_norm.forward(g, store, h)?;
    let gate = block.gate.forward(g, store, x)?;
    let gate = g.gelu(gate);
    let up = block.up.forward(g, store, x)?;
    let f = g.mul(gate, up)?;
    let f = block.down.forward(g, store, f)?;
    let f = block.post_ffn_norm.forward(g, store, f)?;
    g.add(h, f)
}

/// A stack of decoder blocks with its own, permanently frozen, store.
#[derive(Clone, Debug)]
pub struct FrozenSlice<T: Real> {
    config: DecoderBlockConfig,
    blocks: Vec<DecoderBlock>,
    store: ParamStore<T>,
    provenance: Provenance,
}

impl<T: Real> FrozenSlice<T> {
    /// Xavier-normal projections (gain 0.7) from a seeded stream; norm
    /// weights start at zero, i.e. unit scale.
    pub fn random(config: &DecoderBlockConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let blocks = (0..config.block_count)
            .map(|i| DecoderBlock::new(&mut store, i, config, &mut rng))
            .collect::<Result<_>>()?;
        Ok(FrozenSlice { config: config.clone(), blocks, store, provenance: Provenance::RandomSeeded { seed } })
    }

    pub fn config(&self) -> &DecoderBlockConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[DecoderBlock] {
        &self.blocks
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn is_frozen(&self) -> bool {
        self.store.iter().all(|(_, p)| !p.requires_grad())
    }

    pub fn parameter_count(&self) -> usize {
        self.store.count(|_| true)
    }

    /// Runs every block in order over `[B, S, H]`.
    pub fn forward(&self, g: &mut Graph<T>, h: Var) -> Result<Var> {
        self.blocks.iter().try_fold(h, |h, b| decoder_block_forward(g, &self.store, b, &self.config, h))
    }

    pub fn export(&self) -> Result<NamedTensorArchive> {
        self.export_prefixed("")
    }

    pub fn export_prefixed(&self, prefix: &str) -> Result<NamedTensorArchive> {
        let mut a = NamedTensorArchive::new();
        a.push_store(prefix, &self.store)?;
        Ok(a)
    }

    pub fn load(archive: &NamedTensorArchive, config: &DecoderBlockConfig) -> Result<Self> {
        Self::load_prefixed(archive, "", config)
    }

    /// Builds the structure for `config` and fills it from `prefix`-named
    /// entries. Entries outside the prefix are ignored.
    pub fn load_prefixed(archive: &NamedTensorArchive, prefix: &str, config: &DecoderBlockConfig) -> Result<Self> {
        let mut slice = Self::random(config, 0)?;
        archive.load_into(prefix, &mut slice.store)?;
        slice.provenance = Provenance::Imported;
        Ok(slice)
    }
}

pub fn export_slice<T: Real>(slice: &FrozenSlice<T>) -> Result<NamedTensorArchive> {
    slice.export()
}

pub fn load_slice<T: Real>(archive: &NamedTensorArchive, config: &DecoderBlockConfig) -> Result<FrozenSlice<T>> {
    FrozenSlice::load(archive, config)
}
