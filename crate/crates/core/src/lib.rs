//! Core of the protocol toolkit: reaction networks, protocol syntax, ODE
//! integration, deterministic and stochastic evaluation, and a general
//! piecewise deterministic Markov process engine.
//!
//! The crate is `no_std` with `alloc`.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod ast;
pub mod crn;
pub mod integrator;
pub mod noise;
pub mod pdmp;
pub mod sample;
pub mod sem_det;
pub mod sem_stoch;
