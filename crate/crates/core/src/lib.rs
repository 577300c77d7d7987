#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod kernel;
pub mod leaf_gp;
pub mod tree;
pub mod sampler;
pub mod predict;
pub mod cli_io;
