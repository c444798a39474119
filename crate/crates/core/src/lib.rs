//! Cross-domain news recommendation: two attention-based base networks
//! (source and target domain) bridged by a translator that maps a user's
//! source representation into the target domain, so users without target
//! history can still be served.

pub mod base_network;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod rng;
pub mod synthetic;
pub mod training;
pub mod translator;

pub use error::{Error, Result};
