//! Hashing network: a small MLP trained with a pairwise hashing loss.

pub mod io;
pub mod loss;
pub mod matrix;
pub mod mlp;
pub mod train;

pub use io::{deserialize_model, load_sidecar, save_model, serialize_model, ModelSidecar};
pub use loss::{batch_objective, dsh_loss, dsh_loss_grad, pair_batch, DshLossParams, PairLabel};
pub use matrix::Matrix;
pub use mlp::{Gradients, MlpParams, Mode, Tape, GRID_BITS, REFERENCE_HIDDEN, REFERENCE_INPUT};
pub use train::{retrieval_map, train, EpochRecord, TrainConfig, TrainHistory};
