//! Lane following with a deep Q-network.
//!
//! The crate covers the whole pipeline: a tile-based track simulator with
//! differential-drive kinematics ([`sim`]), a ground-plane camera renderer
//! ([`camera`]), the image preprocessing chain ([`preproc`]), a from-scratch
//! convolutional Q-network ([`nn`]), DQN training ([`dqn`]), the evaluation
//! battery ([`eval`]) and an off-board inference server ([`bridge`]).

pub mod bridge;
pub mod camera;
pub mod dqn;
pub mod eval;
pub mod nn;
pub mod preproc;
pub mod scalar;
pub mod sim;
#[cfg(feature = "oracles")]
pub mod testkit;

pub use scalar::{DType, Scalar};

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type PolicyNet32 = nn::PolicyNet<f32>;
pub type PolicyNet64 = nn::PolicyNet<f64>;
pub type Gradients32 = nn::Gradients<f32>;
pub type AdamState32 = nn::AdamState<f32>;
