//! From-scratch differentiable compute for the Q-network.

pub mod adam;
pub mod graph_layer;
pub mod network;
pub mod ops;
pub mod tensor;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use graph_layer::{graph_comm_forward, Activation, GraphCommLayerParams};
pub use network::{
    backward, encoder_forward, graph_head_forward, q_forward, EncoderConfig, Forward, Gradients, NetConfig,
    QNetworkParams,
};
pub use tensor::Tensor;
