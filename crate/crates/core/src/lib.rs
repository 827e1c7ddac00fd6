pub mod adversarial;
pub mod cli;
pub mod copa_data;
pub mod corpus_filter;
pub mod distractor;
pub mod error;
pub mod eval;
pub mod model_backend;
pub mod text;

pub use error::{Error, Result};
