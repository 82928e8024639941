// Validation writes `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archive;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod param;
pub mod slice;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use param::{ParamId, ParamKind, ParamStore, Parameter};
pub use tensor::{Real, Tensor};
