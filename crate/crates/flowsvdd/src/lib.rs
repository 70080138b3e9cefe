//! FlowSVDD: one-class classification with a constant-Jacobian normalizing
//! flow trained to enclose nominal data in a minimal-volume hypersphere.
//!
//! The flow is a NICE-style stack of additive coupling layers plus a
//! diagonal scaling layer, so the Jacobian determinant w is the same at
//! every point. Training minimizes
//!
//! ```text
//! R^2 + 1/(nu*n) * sum_i max(0, ||f(x_i)/w^(1/D) - c||^2 - R^2)
//! ```
//!
//! over the flow parameters and the center c, with R^2 updated in closed
//! form as an order statistic of the squared center distances. A test point
//! is an outlier when ||f(x)/w^(1/D) - c|| > R. Because w is constant in x,
//! shrinking the latent sphere shrinks the input-space bounding region by
//! exactly the same volume, which rules out hypersphere collapse.

pub mod data;
pub mod eval;
pub mod flow;
pub mod manifest;
pub mod model_io;
pub mod pipeline;
pub mod svdd;
pub mod tensor;
pub mod train;

pub use flow::{FlowConfig, FlowModel};
pub use svdd::{ScoreVector, SvddHead};
pub use tensor::{Tape, Tensor, TensorError, Var};
pub use train::{fit, TrainConfig};
