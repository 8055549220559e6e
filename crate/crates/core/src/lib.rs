//! Pocket-conditioned diffusion over ligand atom positions and types.
//!
//! Positions diffuse under a Gaussian process, atom types under a
//! categorical one, and an equivariant graph network trained with pseudo
//! molecule estimation predicts the clean ligand from a noisy one.

pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod denoiser;
pub mod diffusion;
pub mod evalkit;
pub mod geometry;
pub mod rng;
pub mod sampler;
pub mod schedules;
pub mod trainer;

mod error;

pub use error::{Error, Result};
pub use pocketdiff_tensor as tensor;

// The guide under book/ is compiled here so its snippets run as doctests.
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/autodiff.md")]
mod book_autodiff {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/schedules.md")]
mod book_schedules {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/diffusion.md")]
mod book_diffusion {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/pme.md")]
mod book_pme {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/sampling.md")]
mod book_sampling {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
mod book_evaluation {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/data.md")]
mod book_data {}
