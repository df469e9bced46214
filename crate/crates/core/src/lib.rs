//! Frame-level contrastive learning for video-text retrieval.
//!
//! A frame selector scores each frame of a video against the paired text,
//! an assignment strategy splits the frames into positives and negatives,
//! and a frame-level contrastive loss is added to the usual in-batch
//! video-text InfoNCE. Everything runs on a small reverse-mode autodiff
//! engine over `f64` tensors, with synthetic data whose relevant frames are
//! known so the selector can be scored directly.

pub mod cli;
pub mod data;
pub mod encoders;
pub mod error;
pub mod numerics;
pub mod objectives;
pub mod retrieval;
pub mod selector;
pub mod trainkit;

pub use error::{Error, Result};
