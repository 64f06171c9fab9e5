#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bsde;
pub mod cli;
pub mod error;
pub mod lattice;
pub mod model;
pub mod montecarlo;
pub mod operator;
pub mod pde;
pub mod quadrature;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/lattice.md")]
    mod lattice {}
    #[doc = include_str!("../../../book/src/operator.md")]
    mod operator {}
    #[doc = include_str!("../../../book/src/bsde.md")]
    mod bsde {}
    #[doc = include_str!("../../../book/src/pde.md")]
    mod pde {}
    #[doc = include_str!("../../../book/src/montecarlo.md")]
    mod montecarlo {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
