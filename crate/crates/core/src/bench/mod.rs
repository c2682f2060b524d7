//! Synthetic scenes, ground truth and evaluation metrics.

pub mod metrics;
pub mod register;
pub mod scene;

pub use metrics::*;
pub use register::*;
pub use scene::*;
