//! Statistical significance testing for token attributions of a binary text
//! classifier.
//!
//! The crate trains a small bag-of-embeddings classifier, attributes its
//! predictions to tokens with Integrated Gradients, groups tokens by the
//! categories of a word-count dictionary and tests each category against a
//! permutation null. A count-based Mann-Whitney analysis serves as the
//! baseline the attribution results are compared against.

pub mod attribution;
pub mod config;
pub mod corpus;
pub mod error;
pub mod fixture;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod tagging;
pub mod toymodel;
pub mod validation;

pub use error::{Error, Result};
