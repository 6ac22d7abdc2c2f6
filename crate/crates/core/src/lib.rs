//! Modular counting for constraint satisfaction problems.
//!
//! The library computes the number of solutions of a CSP instance modulo a
//! prime `p`, together with the structural machinery that makes that count
//! tractable or provably hard: reduction of the template by automorphisms of
//! order `p`, definability under modular quantifiers, rectangularity and
//! balancedness analysis, a parity (`p = 2`) counting engine driven by
//! compact witness functions, domain refinements, hardness-gadget detection,
//! and binarization of templates.
//!
//! Templates are multi-sorted relational structures ([`Structure`]); instances
//! come in the variables/constraints view ([`Instance`]) and the homomorphism
//! view (a pair of structures), with lossless translations between the two.
//! Every fast path in the crate is paired with a brute-force oracle
//! ([`oracle`]) against which it is tested.

pub mod automorphism;
pub mod binarize;
pub mod cli;
pub mod expansion;
pub mod fixtures;
pub mod gadget;
pub mod gen;
pub mod guards;
pub mod json;
pub mod mpp;
pub mod oracle;
pub mod parity;
pub mod properties;
pub mod refine;
pub mod report;
pub mod structure;

pub use guards::Guards;
pub use structure::{
    Anchored, Assignment, ConstraintRel, Instance, Structure, StructureError,
};

use thiserror::Error;

/// Unified error type for operations that can fail on malformed or
/// out-of-contract input.
#[derive(Debug, Error)]
pub enum Error {
    #[error("structure error: {0}")]
    Structure(#[from] StructureError),
    #[error("size guard exceeded: {0}")]
    Guard(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("malformed input: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Deterministic primality test by trial division; sufficient for the small
/// moduli this crate accepts.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u64;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// Checks that `p` is a prime usable as a modulus, returning it unchanged.
pub fn require_prime(p: u64) -> Result<u64> {
    if is_prime(p) {
        Ok(p)
    } else {
        Err(Error::Precondition(format!("modulus {p} is not prime")))
    }
}
