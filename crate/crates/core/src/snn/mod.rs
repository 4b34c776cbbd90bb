//! Spiking network: LIF layers, direct-encoding forward simulation and BPTT.

pub mod checkpoint;
mod lif;
mod loss;
mod model;
mod tape;

pub use lif::{lif_step, surrogate_grad, surrogate_grad_tensor, LifConfig};
pub use loss::{cross_entropy, loss, softmax};
pub use model::{Layer, Model, ParamRef};
pub use tape::{
    backward, batch_loss, forward, forward_sequence, loss_and_grad, predict, time_summed_logits,
    Dynamics, GradientSet, Tape,
};
