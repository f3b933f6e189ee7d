//! hallucitrace: a desk-scale workbench for locating and repairing factual
//! recall failures in a toy decoder-only transformer.
//!
//! The crate trains a small language model on a synthetic fact world, finds
//! the prompts it answers wrongly, attributes each error to model components
//! by restoring intermediate states under input noise, inspects what each
//! layer writes into the residual stream, and fine-tunes targeted repairs.
//!
//! All numerics are generic over the scalar type via [`Scalar`]: f32 for
//! normal runs, f64 for verification (finite-difference gradient checks,
//! cross-precision comparisons). Concrete aliases live at the crate root.

pub mod causal;
pub mod dataset;
pub mod intervene;
pub mod lens;
pub mod manifestation;
pub mod mitigate;
pub mod model;
pub mod num;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use model::{ModelConfig, Transformer, Vocabulary};
pub use num::Scalar;
pub use tensor::Tensor;

/// Concrete aliases for the two supported precisions.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Transformer32 = model::Transformer<f32>;
pub type Transformer64 = model::Transformer<f64>;
