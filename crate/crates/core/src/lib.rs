//! Ground-truth solvers and convolutional surrogates for parametric PDEs on
//! periodic grids.
//!
//! Two scalar quantities of a random coefficient field `a` are computed and
//! learned:
//!
//! * the effective conductance of `-div(a (grad u + xi)) = 0`
//!   ([`elliptic::effective_conductance`]),
//! * the ground-state energy of the defocusing cubic NLSE with potential `a`
//!   ([`nlse::ground_state_homotopy`]).
//!
//! [`sampler`] turns either solver into reproducible datasets, [`nn`] and
//! [`train`] fit translation-invariant convolutional networks to them, and
//! [`theory`] checks the noisy steepest-descent iteration that motivates the
//! network architecture.
//!
//! The guide under `book/` walks through each piece; its code listings are
//! compiled and run as doc-tests of this crate.

pub mod analysis;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod nlse;
pub mod nn;
pub mod sampler;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use grid::{CoefficientBounds, Direction, Field, GridSpec};

// Every chapter of the guide is compiled as a doc-test so the book cannot
// drift from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/grid.md")]
    mod grid {}
    #[doc = include_str!("../../../book/src/elliptic.md")]
    mod elliptic {}
    #[doc = include_str!("../../../book/src/nlse.md")]
    mod nlse {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/theory.md")]
    mod theory {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
