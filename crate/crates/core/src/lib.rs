//! Device-cloud collaborative learning for recommendation.
//!
//! Devices personalize a shared cloud model by training a short code that a
//! shared basis expands into bottleneck patches ([`metapatch`]). The cloud
//! then distills the recycled per-device models back into its backbone and
//! basis ([`momodistill`]). [`orchestrator`] runs the alternating rounds.

pub mod datahub;
pub mod error;
pub mod evalmetrics;
pub mod metapatch;
pub mod momodistill;
pub mod orchestrator;
pub mod recmodel;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
