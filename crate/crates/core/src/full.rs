//! Reference Gibbs sampler for the complete model on the complete data.
//!
//! Systematic scan: mu, tau2, then every group in ascending id order
//! (theta_i, sigma2_i, and at depth 4 each cell's delta_ij, eta2_ij). Group
//! blocks are conditionally independent given (mu, tau2), and each group owns
//! a persistent RNG substream, so the blocks may be updated in parallel
//! without changing the chain.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

pub use crate::conditional::{
    draw_mu, draw_sigma2_i, draw_tau2, draw_theta_i, mu_conditional, sigma2_conditional,
    tau2_conditional, theta_conditional,
};
use crate::chain::{ChainMeta, ChainStore, RunLength};
use crate::conditional::latent_stats;
use crate::dataset::Dataset;
use crate::error::{H2sError, Result};
use crate::model::{CellState, ChainState, GroupState, GroupStats, ModelSpec, SuffStats};
use crate::rng::{self, domain, StreamRng};

pub const SCAN_ORDER: &str =
    "mu, tau2, then groups by ascending id: theta_i, sigma2_i, then per cell delta_ij, eta2_ij";
pub const INITIALIZATION: &str = "theta_i/delta_ij at data means; sigma2_i/eta2_ij at sample \
     variances (1.0 when undefined, floored at 1e-6); tau2 at the sample variance of theta \
     (floored at 1e-6); mu drawn first";

const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsSettings {
    pub run: RunLength,
    pub seed: u64,
    /// Update group blocks on the rayon pool. The chain is identical either way.
    pub parallel_groups: bool,
}

fn floored_variance(s: &SuffStats) -> f64 {
    s.sample_variance().unwrap_or(1.0).max(VARIANCE_FLOOR)
}

/// Sample variance of `values` floored at 1e-6 (0 for a single value).
pub(crate) fn spread(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return VARIANCE_FLOOR;
    }
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1.0)).max(VARIANCE_FLOOR)
}

pub(crate) fn initial_block_for(group_id: u64, stats: &GroupStats) -> GroupState {
    match stats {
        GroupStats::Flat(s) => GroupState {
            group_id,
            theta: s.mean(),
            sigma2: floored_variance(s),
            cells: Vec::new(),
        },
        GroupStats::Cells(cells) => {
            let cells: Vec<CellState> = cells
                .iter()
                .map(|(cell_id, s)| CellState {
                    cell_id: *cell_id,
                    delta: s.mean(),
                    eta2: floored_variance(s),
                })
                .collect();
            let ds = latent_stats(cells.iter().map(|c| c.delta));
            GroupState {
                group_id,
                theta: ds.mean(),
                sigma2: ds.sample_variance().unwrap_or(1.0).max(VARIANCE_FLOOR),
                cells,
            }
        }
    }
}

/// One Gibbs sweep over a group block given the level above it: theta (with
/// prior Normal(mu, tau2)) and sigma2, then each cell's delta and eta2.
///
/// Stage 1 reuses this with (mu, tau2) replaced by the detached theta prior.
pub(crate) fn gibbs_group_block<R: Rng + ?Sized>(
    block: &mut GroupState,
    stats: &GroupStats,
    mu: f64,
    tau2: f64,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<()> {
    match stats {
        GroupStats::Flat(s) => {
            block.theta = draw_theta_i(s, block.sigma2, mu, tau2, rng)?;
            block.sigma2 = draw_sigma2_i(s, block.theta, spec.prior_sigma2, rng)?;
        }
        GroupStats::Cells(cell_stats) => {
            let ds = latent_stats(block.cells.iter().map(|c| c.delta));
            block.theta = draw_theta_i(&ds, block.sigma2, mu, tau2, rng)?;
            block.sigma2 = draw_sigma2_i(&ds, block.theta, spec.prior_sigma2, rng)?;
            for (cell, (_, s)) in block.cells.iter_mut().zip(cell_stats) {
                cell.delta = draw_theta_i(s, cell.eta2, block.theta, block.sigma2, rng)?;
                cell.eta2 = draw_sigma2_i(s, cell.delta, spec.prior_eta2, rng)?;
            }
        }
    }
    Ok(())
}

pub(crate) fn tool_version() -> String {
    env!("CARGO_PKG_VERSION").to_string()
}

pub fn run_full_gibbs(dataset: &Dataset, spec: &ModelSpec, settings: &GibbsSettings) -> Result<ChainStore> {
    spec.validate()?;
    settings.run.validate()?;
    dataset.validate()?;
    if dataset.depth != spec.depth {
        return Err(H2sError::input(format!(
            "dataset has depth {} but the model has depth {}",
            dataset.depth, spec.depth
        )));
    }
    let stats = dataset.stats()?;

    let groups: Vec<GroupState> = dataset
        .groups
        .iter()
        .zip(&stats)
        .map(|(g, s)| initial_block_for(g.group_id, s))
        .collect();
    let thetas: Vec<f64> = groups.iter().map(|g| g.theta).collect();
    let mut state = ChainState {
        mu: f64::NAN,
        tau2: spread(&thetas),
        groups,
    };

    let mut global_rng = rng::stream(settings.seed, domain::FULL_GLOBAL, 0);
    let mut group_rngs: Vec<StreamRng> = state
        .groups
        .iter()
        .map(|g| rng::stream(settings.seed, domain::FULL_GROUP, g.group_id))
        .collect();

    let mut extra = BTreeMap::new();
    extra.insert("model".into(), serde_json::to_value(spec).unwrap_or_default());
    let meta = ChainMeta {
        sampler: "full-gibbs".into(),
        depth: spec.depth,
        iterations: settings.run.iterations,
        burn_in: settings.run.burn_in,
        thin: settings.run.thin,
        seed: settings.seed,
        scan_order: SCAN_ORDER.into(),
        initialization: INITIALIZATION.into(),
        tool_version: tool_version(),
        extra,
    };
    let mut store = ChainStore::for_state(meta, &state);

    let mut thetas = vec![0.0; state.groups.len()];
    for t in 0..settings.run.iterations {
        for (slot, g) in thetas.iter_mut().zip(&state.groups) {
            *slot = g.theta;
        }
        state.mu = draw_mu(&thetas, state.tau2, spec.hyper_mu, &mut global_rng)?;
        state.tau2 = draw_tau2(&thetas, state.mu, spec.hyper_tau2, &mut global_rng)?;

        let (mu, tau2) = (state.mu, state.tau2);
        let update = |((block, s), r): ((&mut GroupState, &GroupStats), &mut StreamRng)| {
            gibbs_group_block(block, s, mu, tau2, spec, r)
        };
        if settings.parallel_groups {
            state
                .groups
                .par_iter_mut()
                .zip(stats.par_iter())
                .zip(group_rngs.par_iter_mut())
                .try_for_each(update)?;
        } else {
            state
                .groups
                .iter_mut()
                .zip(stats.iter())
                .zip(group_rngs.iter_mut())
                .try_for_each(update)?;
        }

        state
            .check_finite()
            .map_err(|e| H2sError::Numerical(format!("full Gibbs iteration {t}: {e}")))?;
        if settings.run.keeps(t) {
            store.push_state(&state);
        }
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Depth, GroupData, GroupValues};
    use crate::simulate::{simulate, SimConfig};

    fn settings(iterations: u64, burn_in: u64, seed: u64) -> GibbsSettings {
        GibbsSettings {
            run: RunLength::new(iterations, burn_in, 1).unwrap(),
            seed,
            parallel_groups: false,
        }
    }

    #[test]
    fn same_seed_same_chain_and_parallel_matches_serial() {
        let (ds, _) = simulate(&SimConfig::three_level(6, 50, 9)).unwrap();
        let spec = ModelSpec::three_level();
        let a = run_full_gibbs(&ds, &spec, &settings(400, 50, 3)).unwrap();
        let b = run_full_gibbs(&ds, &spec, &settings(400, 50, 3)).unwrap();
        let mut par = settings(400, 50, 3);
        par.parallel_groups = true;
        let c = run_full_gibbs(&ds, &spec, &par).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a.len(), 350);
    }

    #[test]
    fn single_observation_single_group() {
        let ds = Dataset::new(
            Depth::Three,
            vec![GroupData {
                group_id: 1,
                values: GroupValues::Flat(vec![3.0]),
            }],
        )
        .unwrap();
        let mut spec = ModelSpec::three_level();
        spec.hyper_mu = crate::model::NormalPrior { mean: 3.0, variance: 1.0 };
        spec.hyper_tau2 = crate::model::InvGammaPrior { shape: 5.0, rate: 5.0 };
        spec.prior_sigma2 = crate::model::InvGammaPrior { shape: 5.0, rate: 5.0 };
        let store = run_full_gibbs(&ds, &spec, &settings(2000, 200, 1)).unwrap();
        store.validate().unwrap();
        let mu = store.get("mu").unwrap();
        let mean = mu.iter().sum::<f64>() / mu.len() as f64;
        assert!((mean - 3.0).abs() < 0.5, "{mean}");
    }

    #[test]
    fn depth_four_outputs_every_family() {
        let (ds, _) = simulate(&SimConfig::four_level(3, 4, 20, 2)).unwrap();
        let store = run_full_gibbs(&ds, &ModelSpec::four_level(), &settings(300, 30, 4)).unwrap();
        for f in crate::chain::Family::ALL {
            assert!(!store.family(f).is_empty(), "{f}");
        }
        assert_eq!(store.family(crate::chain::Family::Delta).len(), 12);
    }

    #[test]
    fn rejects_depth_mismatch_and_bad_lengths() {
        let (ds, _) = simulate(&SimConfig::three_level(2, 5, 1)).unwrap();
        assert!(run_full_gibbs(&ds, &ModelSpec::four_level(), &settings(10, 1, 1)).is_err());
        assert!(RunLength::new(10, 10, 1).is_err());
        assert!(RunLength::new(10, 1, 0).is_err());
    }
}
