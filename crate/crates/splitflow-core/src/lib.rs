//! Inversion-free rectified-flow latent editing at desk scale.
//!
//! The crate trains a small conditional velocity field on synthetic scenes,
//! edits latents without inversion by integrating guided velocity
//! differences (the FlowEdit construction), and improves multi-attribute
//! edits by splitting the target condition into sub-target flows that are
//! projected back onto the unified trajectory and aggregated with a
//! cosine-consensus softmax over velocity fields.
//!
//! Module map:
//! - [`latent`]: tensors and channel-wise geometry (projection, cosines).
//! - [`field`]: conditional velocity fields (analytic and MLP backends) with
//!   classifier-free guidance.
//! - [`mlp`]: the dense network and its hand-written backward pass.
//! - [`scene`]: synthetic conditional Gaussian-mixture scenes.
//! - [`train`]: flow-matching loss, Adam training, Euler generation.
//! - [`edit`]: the editing engine (baseline, decomposition, LTP, VFA) and
//!   the aggregation-inequality checker.
//! - [`decomp`]: sub-target prompt production (templates, chat-completion
//!   client, rule-based splitter, attribute decomposer) plus a stub server.
//! - [`metrics`]: MSE/PSNR/SSIM, energy distance, background displacement.
//! - [`io`]: binary and JSON persistence for latents and fields.

pub mod bench;
pub mod decomp;
pub mod edit;
pub mod error;
pub mod field;
pub mod io;
pub mod latent;
pub mod metrics;
pub mod mlp;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
pub use field::{Condition, FieldSpec};
pub use latent::{ChannelMap, Latent, Shape};
