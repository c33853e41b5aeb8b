//! Semantic ID construction: an autoencoder over item content whose latent
//! is quantized by stacked residual codebooks.

mod codebook;
mod kmeans;
mod sid;
mod train;

pub use codebook::{Codebook, CodebookHeader, RqEncoding};
pub use kmeans::{count_distinct, kmeans_fit, KMeansFit};
pub use sid::{SemanticId, SidTable};
pub use train::{assign_sids, error_by_depth, train_rqvae, AeInit, AutoencoderParams, RqVae, RqVaeConfig, RqVaeReport};
