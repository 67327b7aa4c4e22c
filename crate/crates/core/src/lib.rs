//! Reduced cutset coding of pairwise Markov random fields on rectangular
//! lattices: exact chain inference, moment matching, an arithmetic-coded
//! line/strip codec and exact rate/redundancy oracles.

pub mod chain;
pub mod codec;
pub mod error;
pub mod experiment;
pub mod gibbs;
pub mod io;
pub mod lattice;
pub mod model;
pub mod moment;
pub mod numeric;
pub mod oracle;
pub mod par;
pub mod rng;

pub use error::{RccError, Result};
