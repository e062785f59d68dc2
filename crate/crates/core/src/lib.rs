//! Anytime neural architecture search for MLPs on tabular data.
//!
//! The engine is split into two phases glued together by a budget-aware
//! coordinator:
//!
//! * **filtering** runs regularized evolution over the layer-size search
//!   space, scoring candidates with a training-free proxy
//!   ([`proxies::ProxyKind::ExpressFlow`] by default);
//! * **refinement** runs successive halving over the top-K survivors with
//!   real (warm-started) training;
//! * the **coordinator** profiles scoring and training costs, splits a time
//!   budget between the phases and enforces a hard deadline.
//!
//! A desk-scale exhaustive benchmark ([`bench`]) records full training
//! curves for every architecture in a small space, which lets proxy
//! correlations and the anytime behaviour be checked without GPUs.

pub mod bench;
pub mod coordinator;
pub mod data;
pub mod error;
pub mod filtering;
pub mod matrix;
pub mod nn;
pub mod par;
pub mod proxies;
pub mod refinement;
pub mod rng;
pub mod space;
pub mod stats;

pub use error::{Error, Result};
