//! Brownian-bridge diffusion toolkit for semi-supervised image dehazing.
//!
//! The crate is organized around a small CPU tensor library with reverse-mode
//! gradients ([`tensor`]), the closed-form bridge quantities ([`schedule`]),
//! the stochastic process engine ([`bridge`]), an endpoint-predictor U-Net
//! built from residual difference-convolution blocks ([`model`]), the
//! two-stage paired/unpaired training loops ([`train`]), synthetic dataset
//! generation ([`data`]), full-reference quality metrics ([`metrics`]), and
//! file formats for tensors, checkpoints, and images ([`io`]).

pub mod bridge;
pub mod data;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod schedule;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use schedule::BridgeSchedule;
pub use tensor::Tensor;
