//! Toy multimodal model over tokenized point clouds, with a hand-written backward
//! pass, gradient checking, training, and the staged spatial-reasoning curriculum.

pub mod curriculum;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod train;
pub mod vocab;

pub use error::{GradOffender, ModelError, Result};
pub use model::{embed_sequence, exact_match, forward, loss, loss_and_grad, Example, Matrix};
pub use params::{ToyModelConfig, ToyModelParams};
pub use train::{train, LrSchedule, Optimizer, TrainOptions, TrainReport};
