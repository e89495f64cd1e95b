//! Simulator and analysis toolkit for multi-server federated learning.
//!
//! A federation of `M` servers, each owning a disjoint set of `N` clients,
//! alternates `T_C` iterations of local client gradient descent with `T_S`
//! iterations of inter-server consensus averaging over a doubly-stochastic
//! mixing matrix. The toolkit runs the protocol on synthetic regression data
//! and checks the measured trajectories against closed-form convergence
//! bounds (server deviation, client drift, average optimality, and the
//! limiting tolerance `epsilon`).
//!
//! Module map:
//!
//! - [`losses`] — quadratic client risk functions, gradients, and the
//!   curvature constants `mu`, `L`, `theta`
//! - [`topology`] — server graphs, Metropolis mixing matrices, and the
//!   consensus contraction factor `sigma_A`
//! - [`engine`] — the alternating client/consensus protocol itself
//! - [`theory`] — bound calculators and trajectory verification
//! - [`datagen`] — seeded synthetic data and the exact pooled optimum
//! - [`metrics`] — per-epoch diagnostics and CSV export
//!
//! The `parallel` feature (on by default) runs independent clients and
//! server rows on a rayon pool. Reduction orders are fixed, so serial and
//! parallel execution produce bit-identical trajectories.

pub mod datagen;
pub mod engine;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod theory;
pub mod topology;

pub use datagen::SyntheticSpec;
pub use engine::{
    EpochSchedule, EpochSnapshot, ExecMode, Federation, FederationInit, RunOptions,
    TrajectoryRecord,
};
pub use losses::{ClientDataset, DataPoint, LossKind, LossModel, ModelParams, SmoothnessConstants};
pub use metrics::EpochMetrics;
pub use theory::TheoryBounds;
pub use topology::{MixingMatrix, ServerGraph};
