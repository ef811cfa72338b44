//! Detection head for AI-generated video, operating on precomputed encoder
//! embeddings: a factorized temporal/spatial shifted-window attention stack
//! with training, evaluation, synthetic data, and benchmarking support.
//!
//! All numeric code is generic over [`Scalar`]; `f32` is the compute type for
//! training and `f64` the verification type for gradient checks.

/// Large activation buffers churn fast; the default allocator's mmap
/// round-trips dominate step time without a pooling allocator.
#[global_allocator]
static GLOBAL_ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod flops;
pub mod gradcheck;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod oracles;
pub mod parallel;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use scalar::Scalar;
pub use tensor::{Parameter, Tensor};

/// Training-precision tensor.
pub type Tensor32 = Tensor<f32>;
/// Verification-precision tensor.
pub type Tensor64 = Tensor<f64>;
/// Training-precision model.
pub type EaSwin32 = model::EaSwin<f32>;

/// Verification-precision model.
pub type EaSwin64 = model::EaSwin<f64>;
