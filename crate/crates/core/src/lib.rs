//! Zero-shot composed image retrieval with pseudo word tokens, at desk scale.

pub mod autodiff;
pub mod checkpoint;
pub mod composer;
pub mod contrastive;
pub mod encoders;
pub mod error;
pub mod mapper;
pub mod pipeline;
pub mod retrieval;
pub mod synthworld;

pub use error::{Error, Result};
