//! Small CPU neural-network library: the layers needed by the VAD and the
//! filler classifiers, backpropagation, training loops and model files.

pub mod gradcheck;
mod io;
mod layer;
mod loss;
mod model;
pub mod ops;
mod optim;
mod tensor;
mod train;

pub use io::{load_model, model_from_bytes, model_to_bytes, save_model, FORMAT_VERSION};
pub use layer::{Cache, Layer, LayerSpec, Param, BN_EPS, BN_MOMENTUM};
pub use loss::{one_hot, Loss};
pub use model::{Gradients, Model, Tape};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::Tensor;
pub use train::{evaluate_loss, train, Dataset, EpochStats, TensorDataset, TrainConfig, TrainReport};
