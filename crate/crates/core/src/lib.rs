//! Domain-adversarial training of 1-D convolutional networks on raw signals.
//!
//! A shared convolutional feature extractor is trained to classify labeled
//! source-domain frames while a gradient reversal layer pushes its features
//! to be indistinguishable between the source and an unlabeled target
//! domain.

mod binio;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod layers;
pub mod model;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
