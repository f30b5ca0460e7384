#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod cli;
pub mod diffcore;
pub mod dynamics;
pub mod env;
pub mod gsplat;
pub mod nets;
pub mod reward;
pub mod train;
