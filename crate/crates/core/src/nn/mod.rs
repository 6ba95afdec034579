//! Minimal double-precision CNN stack: layers, model, optimizer, training.

mod checkpoint;
pub mod layers;
mod model;
mod optim;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use layers::{adaptive_max_pool1d, conv1d, softmax_cross_entropy, BatchNorm, BatchStats, Mode};
pub use model::{argmax, Cnn, CnnConfig, Gradients, TrainPass, PARAM_NAMES};
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;
pub use train::{evaluate, metrics_from_predictions, train, Metrics, TrainConfig, TrainMetrics, TrainedModel};
