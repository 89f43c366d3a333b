pub mod cli;
pub mod data;
pub mod diffcore;
pub mod drf;
pub mod error;
pub mod gp_layer;
pub mod inference;
pub mod kernels;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod params;
pub mod predict;
pub mod random_features;
pub mod rng;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/random-features.md")]
    mod random_features {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/prediction.md")]
    mod prediction {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
