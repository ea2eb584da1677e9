//! Compressed activation caching for frozen-layer training.
//!
//! Frozen early stages of a network are run once; their outputs are
//! compressed with an error-bounded codec and stored in a chunked cache that
//! later epochs read back in a coarse-grained shuffled order.

pub mod channel_aug;
pub mod codec;
pub mod dump;
pub mod e2e;
pub mod error;
pub mod policy;
pub mod refnet;
pub mod rng;
pub mod store;
pub mod tensor;
pub mod token_aug;

pub use error::{Error, Result};
pub use tensor::Tensor;
