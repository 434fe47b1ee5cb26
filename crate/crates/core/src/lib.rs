//! Trinity: context-aware video anomaly detection.
//!
//! Three branches — context, motion, appearance — are projected into a
//! joint embedding space with contrastive alignment; anomaly scores come
//! from alignment failure. A synthetic context-scheduled webcam world
//! makes every mechanism trainable and testable on a desk.

pub mod align;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod infer;
pub mod model;
pub mod numerics;
pub mod report;
pub mod train;
pub mod vq;

pub use error::{Result, TrinityError};
