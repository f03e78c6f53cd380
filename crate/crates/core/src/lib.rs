//! Inter-domain gradient matching for domain generalization.
//!
//! The crate is `no_std` (it needs `alloc`) and holds the pure numerical
//! pieces: seeded synthetic domain datasets and minibatch streams, model
//! families over a flat parameter vector with analytic gradients and
//! finite-difference Hessian-vector products, the training algorithms
//! (ERM, Fish, direct IDGM, SmoothFish, Reptile, Fish with random grouping),
//! and gradient-alignment instrumentation.
//!
//! File formats, configuration and the command line live in the `gradmatch`
//! companion crate.

#![no_std]

extern crate alloc;

pub mod alignment;
pub mod analysis;
pub mod data;
pub mod engine;
mod error;
pub mod trainers;
pub(crate) mod vecops;

pub use alignment::{gip, gip_dual, gip_gradient};
pub use analysis::{track_gip, verify_theorem1, GipRecord, GipTrace, ProbeRow, TheoremProbe};
pub use data::{
    make_linear_benchmark, make_linear_dataset, make_vecsprites, Batch, BatchStream, Domain, DomainDataset, Example,
    OrderPolicy, Split, VecSpritesConfig,
};
pub use engine::{default_hvp_step, fd_grad, hvp, GradEngine, Layout, Model, ModelFamily, ParamVector, FD_GRAD_STEP};
pub use error::Error;
pub use trainers::{evaluate, train, Accuracy, Algo, HistoryRow, TrainResult, TrainerConfig};

pub type Result<T, E = Error> = core::result::Result<T, E>;
