//! The audio-visual network: encoders, shared cross-modal stack, decoder and
//! label heads, plus checkpoint I/O.

pub mod checkpoint;
mod config;
mod network;

pub use config::{ModelConfig, Profile};
pub use network::{ForwardNodes, ForwardOutput, Layout, Model};
