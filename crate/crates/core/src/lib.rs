//! Content-based image retrieval driven by implicit gaze feedback.

pub mod corpus;
pub mod error;
pub mod gaze;
pub mod kernel;
pub mod linrel;
pub mod mkl;
pub mod relevance;
pub mod session;
pub mod sim;
pub mod tensor;

pub use error::{Error, Result};
