//! Miniature multilingual transformer encoder trained with explicit
//! cross-lingual alignment objectives on synthetic cipher languages.

pub mod error;
pub mod eval;
pub mod corpus;
pub mod encoder;
pub mod experiment;
pub mod objectives;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
