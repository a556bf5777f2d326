//! Two-branch temporal-shift convolutional attention network with a
//! hand-written backward pass.

mod checkpoint;
mod linalg;
mod model;
mod ops;
mod tensor;
mod train;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use model::{
    backward, backward_into, flat_len, forward, loss, loss_and_grad, predict, Conv, Dense,
    ForwardCache, ModelParams, Prediction, BLOCK_WIDTHS, DENSE_WIDTH, INPUT_CHANNELS,
};
pub use ops::{
    attention_normalize, mean_appearance, normalized_difference_frames,
    normalized_difference_raw, per_frame_appearance, sigmoid, temporal_shift,
    temporal_shift_backward, DIFF_EPS,
};
pub use tensor::Tensor;
pub use train::{
    evaluate_loss, infer, infer_contiguous, train, train_from, windows_from_clip, AppearanceMode, Inference,
    TrainConfig, TrainOutcome, TrainingWindow,
};
