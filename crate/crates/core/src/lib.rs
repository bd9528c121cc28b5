pub mod active;
pub mod autodiff;
pub mod error;
pub mod harness;
pub mod models;
pub mod policy;
pub mod types;
pub mod worlds;

pub use error::{Error, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;
