//! Conditional denoising predictor, its gradients, optimiser and training.

mod adam;
pub mod checkpoint;
mod net;
mod train;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use net::{
    activation_pattern, conditioning_value, finite_difference_gradient, forward, kink_crossings, gradients, loss, loss_and_grad, ArchConfig, ModelParams,
    TrainingExample, LEAKY_SLOPE,
};
pub use train::{build_example, train, train_with, TrainConfig, TrainReport};
