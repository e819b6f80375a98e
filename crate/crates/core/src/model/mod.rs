//! Shared-embedding two-head network.
//!
//! Every categorical feature is looked up in one embedding table. The target
//! item embedding queries the behaviour sequence through multi-head target
//! attention; the concatenation of all feature embeddings and the attention
//! summary feeds two three-layer towers with sigmoid outputs:
//!
//! - head `a`: purchase in any scene given a previous-stage candidate,
//! - head `g`: purchase in our scene given a purchase in any scene.
//!
//! Gradients are derived by hand for this fixed architecture.

mod gradcheck;
mod network;
mod params;

pub use gradcheck::{gradient_check, GradCheckReport, GradFailure, GradTolerance};
pub use network::{
    backward, backward_into, embed, eslm_score, forward, head_forward, masked_softmax,
    target_attention, AttentionHead, AttentionOutput, Embedded, ForwardTrace, LossGrads,
    SampleTrace, TowerTrace,
};
pub use params::{Affine, Gradients, Head, ModelParams, ModelShape, Tensor, Tower};
