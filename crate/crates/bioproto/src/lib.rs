//! Text formats, statistical model checking and the command-line front end
//! for the protocol language in `bioproto-core`.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod crn_format;
pub mod lexer;
pub mod manifest;
pub mod output;
pub mod parser;
pub mod predicate;
pub mod smc;
pub mod units;

pub use bioproto_core as core;
