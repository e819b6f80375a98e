//! File formats, configuration and the experiment pipeline around
//! [`eslm_core`].

pub mod compare;
pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod rank;
pub mod snapshot;

pub use error::{Error, Result};
