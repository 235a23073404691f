//! Cross-modal embedding of sheet-music snippets and spectrogram excerpts.
//!
//! Two convolutional pathways map 180x200 sheet snippets and 92x42
//! spectrogram excerpts onto a shared 32-dimensional unit sphere. The crate
//! trains them with a pairwise ranking loss on a synthetic corpus and uses the
//! embeddings for snippet retrieval, piece identification and score alignment.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the common choices.

pub mod alignment;
pub mod binio;
pub mod domain;
pub mod error;
pub mod eval;
pub mod model;
pub mod retrieval;
pub mod rng;
pub mod scalar;
pub mod synthdata;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor4f = tensor::Tensor4<f32>;
pub type Tensor4d = tensor::Tensor4<f64>;
pub type Matrixf = tensor::Matrix<f32>;
pub type Matrixd = tensor::Matrix<f64>;
pub type EmbeddingModelf = model::EmbeddingModel<f32>;
pub type EmbeddingModeld = model::EmbeddingModel<f64>;
