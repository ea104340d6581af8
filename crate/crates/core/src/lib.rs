//! Cover-indexed causal world models built from extracted causal events.

pub mod atlas;
pub mod error;
pub mod intervene;
pub mod model;
pub mod pipeline;
pub mod psr;
pub mod sheaf;
pub mod synthlab;

pub use error::{Result, ToposError};
