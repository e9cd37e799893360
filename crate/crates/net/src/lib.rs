//! Encoder-decoder disparity regression from focal stacks: tensor layers,
//! network assembly, masked regression loss, patch extraction, momentum-SGD
//! training, checkpointing, and direct light-field view stacking.

pub mod checkpoint;
pub mod dflf;
pub mod error;
pub mod layers;
pub mod loss;
pub mod network;
pub mod patches;
pub mod train;

pub use error::NetError;
pub use layers::Mode;
pub use network::{build_network, DdffNet, NetworkSpec, Variant};
