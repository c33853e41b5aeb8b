mod config;
mod data;
pub mod layers;
mod net;
mod toy;
mod train;

pub use config::{Fusion, GateInputs, LossConfig, ModelConfig, Variant};
pub use data::{Dataset, Example};
pub use layers::{contrastive_loss, dedup_first, fuse_attention, intra_attention, pool_sequences, sid_embed, total_loss};
pub use net::{make_variant, AttentionParams, EmbeddingTables, ForwardOutput, GateSid, LossOutput, ModelMetadata, Prediction};
pub use train::{train_model, train_model_with, TrainConfig, TrainReport};
pub use toy::{full_loss_grad_check, toy_config, toy_problem, ToyProblem};
