//! Attacks and defenses for machine-learning privacy and security.
//!
//! A small autodiff model core, Paillier encryption, DPSGD with a moments
//! accountant, a FedAvg federation, the classic attacks against all of
//! them, and Mondrian k-anonymity. The `harness` module drives experiments
//! from INI configs.

// `!(x > 0.0)` guards are there to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anonymize;
pub mod attacks;
pub mod dp;
pub mod fed;
pub mod harness;
pub mod model;
pub mod paillier;
pub mod rng;
