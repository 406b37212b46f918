//! Poly-window contrastive learning for multichannel time series.
//!
//! Each record contributes `M` temporal windows to a batch of `N` records. All
//! `NM` windows are encoded, projected and L2-normalized, and a multi-positive
//! InfoNCE objective treats every other window of the same record as a
//! positive. Positives are aggregated per anchor by a geometric or arithmetic
//! mean ([`loss::LossKind`]).
//!
//! Modules follow the pipeline: [`data`] and [`sampler`] produce windows,
//! [`encoder`] maps them to embeddings, [`loss`] scores them, [`optim`] updates
//! parameters, [`pretrain`] runs the loop, [`eval`] fits the linear probe and
//! computes metrics, [`harness`] runs grids of experiments, and [`verify`]
//! bundles the self-check suites.

pub mod data;
pub mod encoder;
pub mod loss;
pub mod optim;
pub mod pretrain;
pub mod error;
pub mod eval;
pub mod harness;
mod rng;
pub mod sampler;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use rng::stream_rng;
