//! First-order analysis of LoRA-induced logit shifts on a smooth toy
//! decoder-only transformer.

pub mod error;
pub mod linalg;

pub use error::{Error, Result};
pub mod analysis;
pub mod cli;
pub mod io;
pub mod lora;
pub mod model;
