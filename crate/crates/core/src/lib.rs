pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod oracle;
pub mod plan;
pub mod transition;

pub use error::{Error, Result};
