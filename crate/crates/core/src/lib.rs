pub mod align;
pub mod bench;
pub mod config;
pub mod diffnet;
pub mod error;
pub mod fmap;
pub mod mesh;
pub mod pipeline;
pub mod rig;
pub mod sparse;
pub mod spectral;
pub mod transfer;

pub use error::{Error, Result};
