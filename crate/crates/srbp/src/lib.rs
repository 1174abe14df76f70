pub mod cli;
pub mod envgen;
pub mod fock;
pub mod error;
pub mod kernels;
pub mod polymer;
pub mod quad;
pub mod rng;
pub mod sltecheck;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/conventions.md")]
    mod conventions {}
    #[doc = include_str!("../../../book/src/environment.md")]
    mod environment {}
    #[doc = include_str!("../../../book/src/polymer.md")]
    mod polymer {}
    #[doc = include_str!("../../../book/src/quadrature.md")]
    mod quadrature {}
    #[doc = include_str!("../../../book/src/pairings.md")]
    mod pairings {}
    #[doc = include_str!("../../../book/src/env_limit.md")]
    mod env_limit {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    mod statistics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
