//! Generative personalized sticker retrieval.
//!
//! Stickers are described by five text properties. Each property value is
//! mapped to a short identifier code (product quantization by default), a
//! small encoder-decoder learns to generate those codes from a user-group
//! token plus the query, and retrieval decodes the properties one by one in
//! the order of the query's inferred intent, intersecting the candidate sets
//! as it goes.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the LLM client and
//! the command line live in the `pearl` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod corpus;
pub mod embed;
pub mod evalsim;
pub mod index;
pub mod intent;
pub mod math;
pub mod optim;
pub mod quantize;
pub mod retrieve;
pub mod rng;
pub mod seqmodel;
pub mod tensor;
pub mod userrep;

mod property;
pub(crate) mod text;

pub use property::{Property, PROPERTIES};
pub use text::{normalize, tokenize};
