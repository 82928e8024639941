use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slice::DecoderBlockConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    InternalWorld,
    Ffn3l,
    Cnn1d,
    PeMlp,
    PhysEntropy,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::InternalWorld, Variant::Ffn3l, Variant::Cnn1d, Variant::PeMlp, Variant::PhysEntropy];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::InternalWorld => "internal_world",
            Variant::Ffn3l => "ffn3l",
            Variant::Cnn1d => "cnn1d",
            Variant::PeMlp => "pe_mlp",
            Variant::PhysEntropy => "phys_entropy",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// Accepts the snake-case tag or its kebab-case spelling.
    fn from_str(s: &str) -> Result<Self> {
        let tag = s.replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == tag)
            .ok_or_else(|| Error::Config(vec![format!("unknown model variant {s:?}")]))
    }
}

/// Architecture hyper-parameters for every variant. Fields a variant does
/// not use are ignored by it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input_dim: usize,
    pub seed: u64,

    pub branches: usize,
    pub branch_hidden: usize,
    pub branch_out: usize,
    pub hidden: usize,
    pub ffn_layers: usize,
    pub ffn_dropout: f64,
    /// Dropout after every cross-branch FFN layer; otherwise only after the last.
    pub ffn_dropout_every_layer: bool,
    pub classifier_widths: Vec<usize>,
    pub classifier_dropout: f64,
    pub slice: DecoderBlockConfig,
    pub slice_seed: u64,

    pub ffn3l_widths: Vec<usize>,
    pub ffn3l_dropout: f64,
    pub cnn_channels: Vec<usize>,
    pub cnn_kernel: usize,
    pub cnn_dense: usize,
    pub cnn_dropout: f64,
    pub pe_width: usize,
    pub pe_dropout: f64,
    pub entropy_trunk: Vec<usize>,
    pub entropy_branch: Vec<usize>,
    pub entropy_residual: usize,
    pub entropy_residual_blocks: usize,
    pub entropy_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::InternalWorld,
            input_dim: 276,
            seed: 42,
            branches: 4,
            branch_hidden: 144,
            branch_out: 288,
            hidden: 1152,
            ffn_layers: 3,
            ffn_dropout: 0.4,
            ffn_dropout_every_layer: true,
            classifier_widths: vec![256, 64],
            classifier_dropout: 0.3,
            slice: DecoderBlockConfig::default(),
            slice_seed: 42,
            ffn3l_widths: vec![256, 128, 64],
            ffn3l_dropout: 0.3,
            cnn_channels: vec![32, 64],
            cnn_kernel: 3,
            cnn_dense: 128,
            cnn_dropout: 0.3,
            pe_width: 32,
            pe_dropout: 0.1,
            entropy_trunk: vec![512, 256],
            entropy_branch: vec![256, 128],
            entropy_residual: 128,
            entropy_residual_blocks: 2,
            entropy_dropout: 0.3,
        }
    }
}

impl ModelConfig {
    pub fn for_variant(variant: Variant) -> Self {
        ModelConfig { variant, ..Default::default() }
    }

    /// Internal-world model small enough for finite-difference checks:
    /// 8 inputs, hidden 16, one 2-head block with a single kv head.
    pub fn toy() -> Self {
        ModelConfig {
            input_dim: 8,
            branches: 4,
            branch_hidden: 4,
            branch_out: 4,
            hidden: 16,
            classifier_widths: vec![8, 4],
            slice: DecoderBlockConfig {
                hidden: 16,
                heads: 2,
                kv_heads: 1,
                head_dim: 8,
                ffn_inner: 16,
                rms_eps: 1e-6,
                block_count: 1,
            },
            ffn3l_widths: vec![8, 6, 4],
            cnn_channels: vec![2, 3],
            cnn_dense: 6,
            pe_width: 3,
            entropy_trunk: vec![8, 6],
            entropy_branch: vec![6, 4],
            entropy_residual: 5,
            ..Default::default()
        }
    }

    /// Like [`toy`](Self::toy) with internal-world widths doubled: still
    /// 8 inputs, but wide enough to learn quickly in short training tests.
    pub fn small() -> Self {
        ModelConfig {
            branch_hidden: 8,
            branch_out: 8,
            hidden: 32,
            classifier_widths: vec![16, 8],
            slice: DecoderBlockConfig {
                hidden: 32,
                heads: 2,
                kv_heads: 1,
                head_dim: 16,
                ffn_inner: 32,
                rms_eps: 1e-6,
                block_count: 1,
            },
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let rate = |name: &str, r: f64, bad: &mut Vec<String>| {
            if !(0.0..1.0).contains(&r) {
                bad.push(format!("{name} must lie in [0, 1), got {r}"));
            }
        };
        if self.input_dim == 0 {
            bad.push("input_dim must be positive".into());
        }
        match self.variant {
            Variant::InternalWorld => {
                if self.branches == 0 || !self.input_dim.is_multiple_of(self.branches) {
                    bad.push(format!(
                        "input_dim ({}) must be divisible by branches ({})",
                        self.input_dim, self.branches
                    ));
                }
                if self.branches * self.branch_out != self.hidden {
                    bad.push(format!(
                        "branches ({}) x branch_out ({}) must equal hidden ({})",
                        self.branches, self.branch_out, self.hidden
                    ));
                }
                if self.slice.hidden != self.hidden {
                    bad.push(format!("slice hidden ({}) must equal hidden ({})", self.slice.hidden, self.hidden));
                }
                if let Err(Error::Config(v)) = self.slice.validate() {
                    bad.extend(v.into_iter().map(|m| format!("slice: {m}")));
                }
                if self.branch_hidden == 0 || self.classifier_widths.contains(&0) {
                    bad.push("layer widths must be positive".into());
                }
                rate("ffn_dropout", self.ffn_dropout, &mut bad);
                rate("classifier_dropout", self.classifier_dropout, &mut bad);
            }
            Variant::Ffn3l => {
                if self.ffn3l_widths.is_empty() || self.ffn3l_widths.contains(&0) {
                    bad.push("ffn3l_widths must be non-empty and positive".into());
                }
                rate("ffn3l_dropout", self.ffn3l_dropout, &mut bad);
            }
            Variant::Cnn1d => {
                if self.cnn_channels.is_empty() || self.cnn_channels.contains(&0) || self.cnn_dense == 0 {
                    bad.push("cnn widths must be non-empty and positive".into());
                }
                if self.cnn_kernel.is_multiple_of(2) {
                    bad.push(format!("cnn_kernel ({}) must be odd", self.cnn_kernel));
                }
                rate("cnn_dropout", self.cnn_dropout, &mut bad);
            }
            Variant::PeMlp => {
                if self.pe_width == 0 {
                    bad.push("pe_width must be positive".into());
                }
                rate("pe_dropout", self.pe_dropout, &mut bad);
            }
            Variant::PhysEntropy => {
                if self.entropy_trunk.is_empty() || self.entropy_branch.is_empty() || self.entropy_residual == 0 {
                    bad.push("entropy widths must be non-empty and positive".into());
                }
                if self.entropy_trunk.last().is_some_and(|&n| n < 2) {
                    bad.push("entropy layer needs at least 2 trunk features".into());
                }
                rate("entropy_dropout", self.entropy_dropout, &mut bad);
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}
