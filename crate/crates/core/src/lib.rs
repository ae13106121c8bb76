//! Embarrassingly parallel posterior estimation with logspline densities.
//!
//! Each data subset is summarized by a logspline fit of its posterior
//! samples; the fits are multiplied, interpolated on a composite Lagrange
//! grid and renormalized into a full-data posterior estimate.

pub mod bspline;
pub mod consensus;
pub mod logspline;
pub mod mise_lab;
pub mod quadrature;
pub mod samples;
pub mod tables;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/bsplines.md")]
    struct BSplines;

    #[doc = include_str!("../../../book/src/logspline.md")]
    struct Logspline;

    #[doc = include_str!("../../../book/src/consensus.md")]
    struct Consensus;

    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
}
