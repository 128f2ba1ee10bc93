//! Multi-scale bidirectional selective-scan classifier for multichannel
//! physiological time series, with the supporting analysis toolkit.

pub mod analysis;
pub mod data;
pub mod error;
pub mod numerics;
pub mod model;
pub mod ssm;
pub mod training;

pub use error::{Error, ErrorKind, Result};
