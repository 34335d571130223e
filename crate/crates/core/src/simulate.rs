//! Synthetic datasets with known generating parameters.
//!
//! Groups are numbered from 1 and cells from 1. Each group draws from its own
//! substream of the seed, so generating groups in any order (or in parallel)
//! gives the same dataset.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{H2sError, Result};
use crate::model::{Cell, CellState, ChainState, Depth, GroupData, GroupState, GroupValues};
use crate::rng::{self, domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub depth: Depth,
    pub n_groups: usize,
    /// m_i, shared by every group unless `per_group_sizes` is given (depth 3).
    pub per_group: usize,
    #[serde(default)]
    pub per_group_sizes: Option<Vec<usize>>,
    /// m, cells per group (depth 4).
    pub cells_per_group: usize,
    /// K_ij, observations per cell (depth 4).
    pub per_cell: usize,
    pub true_mu: f64,
    pub true_tau2: f64,
    pub sigma2_mean: f64,
    pub sigma2_var: f64,
    pub seed: u64,
}

impl SimConfig {
    /// The simulation-study protocol: mu = 25, tau2 = 1.5, sigma2 drawn from
    /// Normal(10, 1).
    pub fn three_level(n_groups: usize, per_group: usize, seed: u64) -> Self {
        SimConfig {
            depth: Depth::Three,
            n_groups,
            per_group,
            per_group_sizes: None,
            cells_per_group: 1,
            per_cell: 1,
            true_mu: 25.0,
            true_tau2: 1.5,
            sigma2_mean: 10.0,
            sigma2_var: 1.0,
            seed,
        }
    }

    pub fn four_level(n_groups: usize, cells_per_group: usize, per_cell: usize, seed: u64) -> Self {
        SimConfig {
            depth: Depth::Four,
            cells_per_group,
            per_cell,
            ..Self::three_level(n_groups, 1, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(H2sError::input(m));
        if self.n_groups == 0 {
            return fail("n_groups must be at least 1".into());
        }
        match self.depth {
            Depth::Three => match &self.per_group_sizes {
                Some(sizes) => {
                    if sizes.len() != self.n_groups {
                        return fail(format!(
                            "per-group size list has {} entries for {} groups",
                            sizes.len(),
                            self.n_groups
                        ));
                    }
                    if sizes.contains(&0) {
                        return fail("every group needs at least one observation".into());
                    }
                }
                None if self.per_group == 0 => {
                    return fail("per_group must be at least 1".into());
                }
                None => {}
            },
            Depth::Four => {
                if self.cells_per_group == 0 || self.per_cell == 0 {
                    return fail("cells_per_group and per_cell must be at least 1".into());
                }
            }
        }
        if !self.true_mu.is_finite() {
            return fail("true_mu must be finite".into());
        }
        if !(self.true_tau2 > 0.0 && self.true_tau2.is_finite()) {
            return fail(format!("true_tau2 must be positive, got {}", self.true_tau2));
        }
        if !(self.sigma2_mean > 0.0 && self.sigma2_mean.is_finite()) {
            return fail(format!("sigma2_mean must be positive, got {}", self.sigma2_mean));
        }
        if !(self.sigma2_var >= 0.0 && self.sigma2_var.is_finite()) {
            return fail(format!("sigma2_var must be non-negative, got {}", self.sigma2_var));
        }
        Ok(())
    }

    fn size_of(&self, index: usize) -> usize {
        self.per_group_sizes
            .as_ref()
            .map_or(self.per_group, |s| s[index])
    }
}

/// Generating parameters of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub config: SimConfig,
    pub state: ChainState,
}

const MAX_REDRAWS: usize = 100_000;

/// Normal(mean, var) conditioned on being positive, by rejection.
fn positive_normal<R: Rng + ?Sized>(mean: f64, var: f64, rng: &mut R) -> Result<f64> {
    let dist = Normal::new(mean, var.sqrt()).map_err(|e| H2sError::input(e.to_string()))?;
    for _ in 0..MAX_REDRAWS {
        let x = dist.sample(rng);
        if x > 0.0 {
            return Ok(x);
        }
    }
    Err(H2sError::input(format!(
        "Normal({mean}, {var}) produced no positive draw in {MAX_REDRAWS} attempts"
    )))
}

fn normal(mean: f64, var: f64) -> Result<Normal<f64>> {
    Normal::new(mean, var.sqrt()).map_err(|e| H2sError::input(e.to_string()))
}

pub fn simulate_three_level(cfg: &SimConfig) -> Result<(Dataset, Truth)> {
    if cfg.depth != Depth::Three {
        return Err(H2sError::input("simulate_three_level needs depth 3"));
    }
    cfg.validate()?;
    let mut groups = Vec::with_capacity(cfg.n_groups);
    let mut states = Vec::with_capacity(cfg.n_groups);
    for index in 0..cfg.n_groups {
        let group_id = index as u64 + 1;
        let mut rng = rng::stream(cfg.seed, domain::SIMULATE, group_id);
        let theta = normal(cfg.true_mu, cfg.true_tau2)?.sample(&mut rng);
        let sigma2 = positive_normal(cfg.sigma2_mean, cfg.sigma2_var, &mut rng)?;
        let obs = normal(theta, sigma2)?;
        let values: Vec<f64> = (0..cfg.size_of(index)).map(|_| obs.sample(&mut rng)).collect();
        groups.push(GroupData {
            group_id,
            values: GroupValues::Flat(values),
        });
        states.push(GroupState {
            group_id,
            theta,
            sigma2,
            cells: Vec::new(),
        });
    }
    finish(cfg, groups, states)
}

pub fn simulate_four_level(cfg: &SimConfig) -> Result<(Dataset, Truth)> {
    if cfg.depth != Depth::Four {
        return Err(H2sError::input("simulate_four_level needs depth 4"));
    }
    cfg.validate()?;
    let mut groups = Vec::with_capacity(cfg.n_groups);
    let mut states = Vec::with_capacity(cfg.n_groups);
    for index in 0..cfg.n_groups {
        let group_id = index as u64 + 1;
        let mut rng = rng::stream(cfg.seed, domain::SIMULATE, group_id);
        let theta = normal(cfg.true_mu, cfg.true_tau2)?.sample(&mut rng);
        let sigma2 = positive_normal(cfg.sigma2_mean, cfg.sigma2_var, &mut rng)?;
        let delta_dist = normal(theta, sigma2)?;
        let mut cells = Vec::with_capacity(cfg.cells_per_group);
        let mut cell_states = Vec::with_capacity(cfg.cells_per_group);
        for c in 0..cfg.cells_per_group {
            let cell_id = c as u64 + 1;
            let delta = delta_dist.sample(&mut rng);
            let eta2 = positive_normal(cfg.sigma2_mean / 10.0, cfg.sigma2_var / 10.0, &mut rng)?;
            let obs = normal(delta, eta2)?;
            cells.push(Cell {
                cell_id,
                values: (0..cfg.per_cell).map(|_| obs.sample(&mut rng)).collect(),
            });
            cell_states.push(CellState {
                cell_id,
                delta,
                eta2,
            });
        }
        groups.push(GroupData {
            group_id,
            values: GroupValues::Cells(cells),
        });
        states.push(GroupState {
            group_id,
            theta,
            sigma2,
            cells: cell_states,
        });
    }
    finish(cfg, groups, states)
}

/// Dispatches on `cfg.depth`.
pub fn simulate(cfg: &SimConfig) -> Result<(Dataset, Truth)> {
    match cfg.depth {
        Depth::Three => simulate_three_level(cfg),
        Depth::Four => simulate_four_level(cfg),
    }
}

fn finish(cfg: &SimConfig, groups: Vec<GroupData>, states: Vec<GroupState>) -> Result<(Dataset, Truth)> {
    let dataset = Dataset::new(cfg.depth, groups)?;
    let truth = Truth {
        config: cfg.clone(),
        state: ChainState {
            mu: cfg.true_mu,
            tau2: cfg.true_tau2,
            groups: states,
        },
    };
    Ok((dataset, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_given_seed() {
        let cfg = SimConfig::three_level(20, 2000, 42);
        let (a, ta) = simulate(&cfg).unwrap();
        let (b, tb) = simulate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = simulate(&SimConfig::three_level(20, 2000, 43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_tau2_pins_theta() {
        let mut cfg = SimConfig::three_level(30, 5, 1);
        cfg.true_tau2 = 1e-12;
        let (_, truth) = simulate(&cfg).unwrap();
        for g in &truth.state.groups {
            assert!((g.theta - 25.0).abs() < 1e-5);
        }
    }

    #[test]
    fn theta_mean_within_four_sigma() {
        for seed in 0..10 {
            let cfg = SimConfig::three_level(250, 1, seed);
            let (_, truth) = simulate(&cfg).unwrap();
            let n = truth.state.groups.len() as f64;
            let mean = truth.state.groups.iter().map(|g| g.theta).sum::<f64>() / n;
            assert!((mean - 25.0).abs() < 4.0 * (1.5 / n).sqrt(), "seed {seed}: {mean}");
        }
    }

    #[test]
    fn airline_shape_and_positive_variances() {
        let cfg = SimConfig::four_level(12, 7, 500, 3);
        let (ds, truth) = simulate(&cfg).unwrap();
        assert_eq!(ds.n_groups(), 12);
        for g in &ds.groups {
            assert_eq!(g.cell_ids(), (1..=7).collect::<Vec<_>>());
            assert_eq!(g.n_observations(), 3500);
        }
        for g in &truth.state.groups {
            assert!(g.sigma2 > 0.0);
            assert!(g.cells.iter().all(|c| c.eta2 > 0.0));
        }
    }

    #[test]
    fn single_observation_cells() {
        let cfg = SimConfig::four_level(3, 4, 1, 8);
        let (ds, _) = simulate(&cfg).unwrap();
        assert!(ds.groups.iter().all(|g| g.n_observations() == 4));
    }

    #[test]
    fn negative_variance_draws_are_redrawn() {
        let mut cfg = SimConfig::three_level(200, 1, 5);
        cfg.sigma2_mean = 0.5;
        cfg.sigma2_var = 4.0;
        let (_, truth) = simulate(&cfg).unwrap();
        assert!(truth.state.groups.iter().all(|g| g.sigma2 > 0.0));
    }

    #[test]
    fn unequal_group_sizes() {
        let mut cfg = SimConfig::three_level(3, 0, 5);
        cfg.per_group_sizes = Some(vec![1, 10, 100]);
        let (ds, _) = simulate(&cfg).unwrap();
        let sizes: Vec<_> = ds.groups.iter().map(|g| g.n_observations()).collect();
        assert_eq!(sizes, vec![1, 10, 100]);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = SimConfig::three_level(0, 10, 1);
        assert!(simulate(&cfg).is_err());
        cfg.n_groups = 2;
        cfg.true_tau2 = 0.0;
        assert!(simulate(&cfg).is_err());
        let cfg = SimConfig::four_level(2, 0, 3, 1);
        assert!(simulate(&cfg).is_err());
        let cfg = SimConfig::three_level(2, 10, 1);
        assert!(simulate_four_level(&cfg).is_err());
    }
}
