//! The differentiable substrate: a rectifier MLP, its losses, analytic
//! gradients, optimizers and the cosine learning-rate schedule.

mod backprop;
mod checkpoint;
mod loss;
mod model;
mod optim;
mod schedule;
mod train;

pub use backprop::{backward, Backward, GradientSet, LayerGrad};
pub use checkpoint::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC};
pub use loss::{
    log_softmax, loss_and_grad, loss_hard, loss_soft, softmax, softmax_with_temperature, LossKind,
};
pub use model::{argmax, Architecture, Layer, Model};
pub use optim::{Optimizer, OptimizerKind, SGD_MOMENTUM};
pub use schedule::CosineSchedule;
pub use train::{epoch_order, train, train_with, CorrectnessTracer, TrainConfig, TrainObserver};
