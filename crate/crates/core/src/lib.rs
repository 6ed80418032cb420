//! Inexact projected preconditioned gradient descent (IPPGD) with variable
//! metrics for `min f(u)` subject to `Bu = 0`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod checks;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod multigrid;
pub mod operator;
pub mod pde;
pub mod problems;
pub mod projection;
pub mod solver;

pub use error::{Error, Result};
pub use operator::Vector;
