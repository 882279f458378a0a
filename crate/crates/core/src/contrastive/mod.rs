//! Intra- and cross-modal InfoNCE objective with analytic gradients, and a
//! small trainer aligning a pair of linear encoders on paired features.

mod gradcheck;
mod loss;
mod train;

pub use gradcheck::{gradient_check, random_batch, relative_error, GradCheckReport};
pub use loss::{
    infonce, l2_normalize, loss_and_gradient, loss_gradient, modal_losses, BatchGradient,
    LossConfig, ModalLosses, TrainBatch,
};
pub use train::{
    decode_checkpoint, encode_checkpoint, loss_trace_csv, toy_train, EpochLoss,
    LinearEncoderPair, LinearMap, TrainConfig,
};
