//! Distillation losses, data split, training loop and checkpoints.

mod checkpoint;
mod config;
mod loss;
mod split;
mod train;

pub use checkpoint::{load_model, sidecar_path, Checkpoint, BEST_CHECKPOINT};
pub use config::{Method, TrainConfig};
pub use loss::{
    align_teacher, layer_loss, layer_loss_with_grad, normalize_features, per_image_layer_loss,
    pixel_loss, pool_teacher_features, resnet_tap_index, total_loss_mixed, total_loss_reduced,
    Target, NORM_EPS,
};
pub use split::{split_dataset, split_indices};
pub use train::{
    branch_specs, init_students, loss_and_gradients, train, EpochStats, Teachers, TrainOutcome,
};
