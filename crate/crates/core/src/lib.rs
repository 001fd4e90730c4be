//! Data-poisoning attacks on factorization-based collaborative filtering.
//!
//! Solvers ([`als`], [`nuclear`]), attacker utilities ([`objective`]), KKT-based
//! gradients ([`implicit`]), the attack optimizers ([`attack`]) and detection
//! metrics ([`metrics`]).
#![cfg_attr(not(test), no_std)]
extern crate alloc;

pub mod als;
pub mod attack;
pub mod error;
pub mod implicit;
mod linalg;
pub mod metrics;
pub mod nuclear;
pub mod objective;
pub mod ratings;
pub mod synth;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
