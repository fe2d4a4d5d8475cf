//! A desk-scale laboratory for contrastive self-supervised learning.
//!
//! The crate trains small MLP encoders with a momentum-contrast objective on
//! procedurally generated images and videos, tracks regions through videos
//! to mine extra positive pairs, and measures the learned representations
//! with a class-conditioned firing-rate invariance score and linear probes.

pub mod cli;
pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod image;
pub mod invariance;
pub mod pipeline;
pub mod rng;
pub mod tracker;
pub mod world;

pub use error::{LabError, Result};
