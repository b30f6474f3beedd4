pub mod autograd;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod ops;
pub mod tensor;
pub mod train;
pub mod verify;

pub use data::{Dataset, ImagePair};
pub use error::{Error, Result};
pub use network::{count_params, FusionKind, Net, NetConfig};
pub use tensor::{DType, Element, Shape, Tensor};
pub use train::{LogRecord, TrainConfig, TrainLog};
