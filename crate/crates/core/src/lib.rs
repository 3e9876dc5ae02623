// Negated float comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assoc;
pub mod data;
pub mod error;
pub mod io;
pub mod manifold;
pub mod record;
pub mod sim;
pub mod svs;
