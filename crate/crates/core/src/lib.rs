//! Conditional densities on measure-zero level sets.
//!
//! Conditioning a density on `{x : φ(x) = s}` has no unique answer: the fan
//! measure depends on the auxiliary coordinates `ψ` chosen alongside `φ`,
//! while the canonical measure (density times surface measure, normalized) does
//! not. This crate computes both, checks when they must agree, and measures how
//! far apart they are when they do not.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod appendix;
pub mod bayes;
pub mod canonical;
pub mod equivalence;
pub mod error;
pub mod expr;
pub mod fan;
pub mod geometry;
pub mod linalg;
pub mod quad;
pub mod sampler;
pub mod table;

pub use error::{Error, Result};
pub use expr::{ExprError, Expression};
pub use geometry::{Chart, LevelSetProblem};
pub use table::{DensityTable, GridSpec, Method, Support};
