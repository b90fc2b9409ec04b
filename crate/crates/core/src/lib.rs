pub mod active;
pub mod completion;
pub mod data;
pub mod error;
pub mod harness;
pub(crate) mod linalg;
pub mod model_file;
pub mod ordlogit;
pub mod pmf;

pub use error::{Error, Result};
