//! Two-stage parallel MCMC for nested hierarchical Normal / Inverse-Gamma
//! models.
//!
//! Stage 1 samples each group independently under a detached prior and
//! stores the draws in a [`bank::SampleBank`]. Stage 2 rebuilds the full
//! posterior from the banks alone with Metropolis-within-Gibbs, proposing
//! each group block from its bank. [`full::run_full_gibbs`] is the reference
//! sampler on the complete data, and [`report::compare_chains`] measures how
//! far the two-stage marginals are from it.

pub mod bank;
pub mod chain;
pub mod conditional;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod full;
pub mod io;
pub mod metrics;
pub mod model;
pub mod report;
pub mod rng;
pub mod simulate;
pub mod stage1;
pub mod stage2;

pub use bank::SampleBank;
pub use chain::{ChainMeta, ChainStore, Family, RunLength};
pub use dataset::Dataset;
pub use error::{H2sError, Result};
pub use full::{run_full_gibbs, GibbsSettings};
pub use model::{ChainState, Depth, GroupData, GroupValues, ModelSpec};
pub use report::{compare_chains, ComparisonReport, TimingTable};
pub use simulate::{simulate, SimConfig};
pub use stage1::{run_stage1_all, run_stage1_group, BankSize};
pub use stage2::{run_stage2, RatioMode, Stage2Settings};
