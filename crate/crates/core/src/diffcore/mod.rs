//! Reverse-mode differentiation, the Adam optimizer and the L2 regularizer.
//!
//! The tape is rebuilt for every objective evaluation: the graph shape of the
//! model never changes, but the Monte-Carlo noise fed into it does.

mod adam;
mod tape;

pub use adam::{l2_penalty, AdamConfig, AdamState};
pub use tape::{Tape, Var};

/// Default L2 coefficient applied to every trainable block.
pub const DEFAULT_L2: f64 = 5e-4;
