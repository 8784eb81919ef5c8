//! Feed-forward network predicting the global MPP voltage from irradiance
//! readings or probe `(v, i)` pairs.

mod data;
mod mlp;

pub use data::*;
pub use mlp::*;
