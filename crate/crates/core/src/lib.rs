//! State-of-health estimation for lithium-ion cells with recurrent networks
//! and an HSIC information-bottleneck penalty on the hidden representation.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod hsic;
pub mod metrics;
pub mod numerics;
pub mod recurrent;
pub mod training;

pub use error::{Error, Result};
