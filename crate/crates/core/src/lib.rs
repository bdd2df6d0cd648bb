//! Laboratory for next-token prediction capacity of one-layer transformers.
//!
//! The crate is organised by concern:
//!
//! * [`corpus`]: tokenization, the context trie, empirical next-token
//!   distributions, cross-entropy and its entropy lower bound.
//! * [`langspace`]: depth-truncated probabilistic language spaces, the
//!   conditional/chain-rule bijection, and synthetic corpus sampling.
//! * [`model`]: activations with Taylor metadata, the one-layer multi-head
//!   decoder-only transformer, its scalar reduction, token averaging,
//!   parameter counting and capacity bounds.
//! * [`interpolate`]: exact interpolation of `n` contexts with `m >= n`
//!   hidden neurons by a single linear solve.
//! * [`ranklab`]: rank, Kruskal rank and injectivity experiments.
//! * [`train`]: full-batch Adam training toward the entropy bound, and
//!   the sweep over hidden widths.

pub mod corpus;
pub mod error;
pub mod interpolate;
pub mod langspace;
pub mod linalg;
pub mod model;
pub mod ranklab;
pub mod rng;
pub mod train;

pub use error::{Error, Result};

/// Token ids are 1-based: a vocabulary of size `omega` uses `1..=omega`.
pub type Token = u32;

/// Zero-based array index of a token.
#[inline]
pub(crate) fn tix(t: Token) -> usize {
    t as usize - 1
}
