//! Stage 1: independent per-group samplers.
//!
//! Each group is sampled under the detached model in which theta_i has its own
//! fixed prior (`ModelSpec::stage1_theta_prior`) instead of Normal(mu, tau2).
//! Every other level keeps the full model's priors. Groups never see each
//! other's data, so they run on separate workers with no communication.

use std::time::Instant;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{bank_columns, BankMeta, SampleBank};
use crate::dataset::Dataset;
use crate::error::{H2sError, Result};
use crate::full::{gibbs_group_block, tool_version};
use crate::model::{compute_stats, Depth, GroupData, GroupState, ModelSpec};
use crate::rng::{stage1_seed, StreamRng};

/// Retention settings for one group's bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankSize {
    /// A_i, retained draws.
    pub draws: u64,
    pub burn_in: u64,
    pub thin: u64,
}

/// Samples one group's detached posterior and keeps `size.draws` draws.
/// `seed` is this group's own seed (see [`stage1_seed`]).
pub fn run_stage1_group(group: &GroupData, spec: &ModelSpec, size: BankSize, seed: u64) -> Result<SampleBank> {
    spec.validate()?;
    if size.draws == 0 {
        return Err(H2sError::input("stage 1 needs at least one retained draw (A >= 1)"));
    }
    if size.thin == 0 {
        return Err(H2sError::input("thinning interval must be at least 1"));
    }
    if group.depth() != spec.depth {
        return Err(H2sError::input(format!(
            "group {} has depth {} data but the model has depth {}",
            group.group_id,
            group.depth(),
            spec.depth
        )));
    }
    let stats = compute_stats(group)?;
    let mut block: GroupState = crate::full::initial_block_for(group.group_id, &stats);
    let prior = spec.stage1_theta_prior;
    let mut rng = StreamRng::seed_from_u64(seed);

    for t in 0..size.burn_in {
        gibbs_group_block(&mut block, &stats, prior.mean, prior.variance, spec, &mut rng)
            .map_err(|e| at_iteration(group.group_id, t, e))?;
    }
    let columns = bank_columns(&group.cell_ids());
    let mut draws = Vec::with_capacity(size.draws as usize * columns.len());
    for a in 0..size.draws {
        for k in 0..size.thin {
            gibbs_group_block(&mut block, &stats, prior.mean, prior.variance, spec, &mut rng)
                .map_err(|e| at_iteration(group.group_id, size.burn_in + a * size.thin + k, e))?;
        }
        draws.push(block.theta);
        draws.push(block.sigma2);
        for c in &block.cells {
            draws.push(c.delta);
            draws.push(c.eta2);
        }
    }

    let meta = BankMeta {
        depth: spec.depth,
        stage1_theta_prior: prior,
        prior_sigma2: spec.prior_sigma2,
        prior_eta2: (spec.depth == Depth::Four).then_some(spec.prior_eta2),
        seed,
        burn_in: size.burn_in,
        thin: size.thin,
        n_observations: group.n_observations() as u64,
        tool_version: tool_version(),
    };
    SampleBank::new(group.group_id, meta, columns, draws).map_err(|e| match e {
        H2sError::Input(m) => H2sError::Numerical(m),
        other => other,
    })
}

fn at_iteration(group_id: u64, t: u64, e: H2sError) -> H2sError {
    match e {
        H2sError::Domain(m) | H2sError::Numerical(m) => {
            H2sError::Numerical(format!("group {group_id}, stage-1 iteration {t}: {m}"))
        }
        other => other,
    }
}

/// Result of one group's stage-1 run.
#[derive(Debug)]
pub struct GroupOutcome {
    pub group_id: u64,
    /// Observations handed to the worker for this group.
    pub observations_read: u64,
    pub seconds: f64,
    pub result: Result<SampleBank>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Timing {
    pub per_group_seconds: Vec<(u64, f64)>,
    pub average_per_group_seconds: f64,
    pub max_per_group_seconds: f64,
    pub wall_seconds: f64,
    pub workers: usize,
}

#[derive(Debug)]
pub struct Stage1Run {
    pub outcomes: Vec<GroupOutcome>,
    pub wall_seconds: f64,
    pub workers: usize,
}

impl Stage1Run {
    pub fn timing(&self) -> Stage1Timing {
        let per: Vec<(u64, f64)> = self.outcomes.iter().map(|o| (o.group_id, o.seconds)).collect();
        let n = per.len().max(1) as f64;
        Stage1Timing {
            average_per_group_seconds: per.iter().map(|p| p.1).sum::<f64>() / n,
            max_per_group_seconds: per.iter().map(|p| p.1).fold(0.0, f64::max),
            per_group_seconds: per,
            wall_seconds: self.wall_seconds,
            workers: self.workers,
        }
    }

    /// All banks in group order, or an error naming every failed group.
    pub fn into_banks(self) -> Result<Vec<SampleBank>> {
        let mut banks = Vec::with_capacity(self.outcomes.len());
        let mut failed = Vec::new();
        let mut first = None;
        for o in self.outcomes {
            match o.result {
                Ok(b) => banks.push(b),
                Err(e) => {
                    failed.push(o.group_id);
                    first.get_or_insert_with(|| e.to_string());
                }
            }
        }
        if failed.is_empty() {
            Ok(banks)
        } else {
            Err(H2sError::Stage1Failed {
                group_ids: failed,
                first: first.unwrap_or_default(),
            })
        }
    }
}

/// Runs every group's stage-1 sampler on `workers` threads.
///
/// `draws_per_group` holds A_i for each group in dataset order (a single entry
/// is applied to every group). Per-group seeds depend only on
/// `(master_seed, group_id)`, so the banks are identical for any worker count.
pub fn run_stage1_all(
    dataset: &Dataset,
    spec: &ModelSpec,
    draws_per_group: &[u64],
    burn_in: u64,
    thin: u64,
    master_seed: u64,
    workers: usize,
) -> Result<Stage1Run> {
    spec.validate()?;
    if workers == 0 {
        return Err(H2sError::input("need at least one worker"));
    }
    if dataset.depth != spec.depth {
        return Err(H2sError::input(format!(
            "dataset has depth {} but the model has depth {}",
            dataset.depth, spec.depth
        )));
    }
    let n = dataset.n_groups();
    let sizes: Vec<u64> = match draws_per_group.len() {
        1 => vec![draws_per_group[0]; n],
        k if k == n => draws_per_group.to_vec(),
        k => {
            return Err(H2sError::input(format!(
                "A list has {k} entries for {n} groups"
            )))
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| H2sError::input(format!("building worker pool: {e}")))?;

    let start = Instant::now();
    let outcomes: Vec<GroupOutcome> = pool.install(|| {
        dataset
            .groups
            .par_iter()
            .zip(sizes.par_iter())
            .map(|(group, &draws)| {
                let t0 = Instant::now();
                let size = BankSize { draws, burn_in, thin };
                let seed = stage1_seed(master_seed, group.group_id);
                let result = run_stage1_group(group, spec, size, seed);
                GroupOutcome {
                    group_id: group.group_id,
                    observations_read: group.n_observations() as u64,
                    seconds: t0.elapsed().as_secs_f64(),
                    result,
                }
            })
            .collect()
    });
    for o in &outcomes {
        if let Err(e) = &o.result {
            log::error!("stage 1 failed for group {}: {e}", o.group_id);
        }
    }
    Ok(Stage1Run {
        outcomes,
        wall_seconds: start.elapsed().as_secs_f64(),
        workers,
    })
}
