#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod datasets;
pub mod diffmath;
pub mod evaluation;
pub mod inference;
pub mod knn;
pub mod nets;
