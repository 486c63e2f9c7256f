//! Toy-scale bidirectional recurrent fusion network for event-based frame
//! interpolation, on a minimal reverse-mode tape with gradient checking.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod train;

pub use checkpoint::{decode_model, encode_model, load_model, save_model};
pub use error::{Error, Result};
pub use gradcheck::{GradCheck, GradCheckReport};
pub use layers::{ParamId, ParamStore, LEAKY_SLOPE};
pub use model::{RefidConfig, RefidInputs, RefidModel};
pub use tape::{Gradients, Tape, Value};
pub use tensor::Tensor;
pub use train::{dataset_loss, train_toy, AdamConfig, TrainSample, TRAIN_CHARBONNIER_EPS};
