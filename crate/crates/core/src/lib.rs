// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod dsl;
pub mod envs;
pub mod experiment;
pub mod monitors;
pub mod par;
pub mod rl;
pub mod runtime;
pub mod semantics;
pub mod vpmu;
