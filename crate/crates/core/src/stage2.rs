//! Stage 2: Metropolis-Hastings-within-Gibbs over the full model, using the
//! stage-1 banks as independence proposals.
//!
//! mu and tau2 are drawn from their conjugate conditionals. Each group block
//! (theta_i, sigma2_i and, at depth 4, every delta_ij, eta2_ij) is then
//! proposed jointly as a uniformly chosen bank row. With target
//! h = p(y_i | block) p(theta_i | mu, tau2) p(rest of block) and proposal
//! q = p(y_i | block) p_stage1(theta_i) p(rest of block), the likelihood and
//! every non-theta factor cancel, leaving the target-to-candidate ratio
//!
//! ```text
//! log R(theta) = log N(theta | mu, tau2) - log p_stage1(theta)
//! log r        = log R(theta_cand) - log R(theta_prev)
//! ```
//!
//! No data is read and no likelihood is evaluated here.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::SampleBank;
use crate::chain::{ChainMeta, ChainStore, RunLength};
use crate::conditional::{draw_mu, draw_tau2};
use crate::error::{H2sError, Result};
use crate::full::{spread, tool_version};
use crate::model::{log_normal_density, ChainState, GroupState, ModelSpec, NormalPrior};
use crate::rng::{self, domain, StreamRng};

/// Whether the stage-1 prior terms stay in the acceptance ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RatioMode {
    /// Keep `p_stage1(theta_prev) / p_stage1(theta_cand)`.
    #[default]
    Exact,
    /// Drop the stage-1 prior as if it were flat.
    Uniform,
}

impl std::str::FromStr for RatioMode {
    type Err = H2sError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(RatioMode::Exact),
            "uniform" => Ok(RatioMode::Uniform),
            other => Err(H2sError::input(format!(
                "ratio mode must be `exact` or `uniform`, got {other:?}"
            ))),
        }
    }
}

/// `log R(theta)`: full-model prior of theta over its stage-1 prior.
pub fn log_target_to_candidate(
    theta: f64,
    mu: f64,
    tau2: f64,
    stage1_prior: NormalPrior,
    mode: RatioMode,
) -> Result<f64> {
    let target = log_normal_density(theta, mu, tau2)?;
    Ok(match mode {
        RatioMode::Exact => target - stage1_prior.ln_pdf(theta)?,
        RatioMode::Uniform => target,
    })
}

/// Log MH acceptance ratio for moving a group from `theta_prev` to
/// `theta_cand`. Identical at depth 3 and 4; sigma2, delta and eta2 never
/// enter.
pub fn log_accept_ratio(
    theta_cand: f64,
    theta_prev: f64,
    mu: f64,
    tau2: f64,
    stage1_prior: NormalPrior,
    mode: RatioMode,
) -> Result<f64> {
    if !(tau2 > 0.0) {
        return Err(H2sError::domain(format!("tau2 must be positive, got {tau2}")));
    }
    let cand = log_target_to_candidate(theta_cand, mu, tau2, stage1_prior, mode)?;
    let prev = log_target_to_candidate(theta_prev, mu, tau2, stage1_prior, mode)?;
    Ok(cand - prev)
}

/// One independence-MH update of a group block from its bank.
///
/// Always consumes exactly one index draw and one uniform, so the RNG stream
/// stays aligned whatever the decision. Returns whether the candidate was
/// accepted; on rejection `block` is left unchanged.
pub fn mh_group_update<R: Rng + ?Sized>(
    block: &mut GroupState,
    bank: &SampleBank,
    mu: f64,
    tau2: f64,
    mode: RatioMode,
    rng: &mut R,
) -> Result<bool> {
    let rows = bank.rows();
    if rows == 0 {
        return Err(H2sError::input(format!("bank for group {} is empty", bank.group_id)));
    }
    let idx = rng.random_range(0..rows);
    let u: f64 = rng.random();
    let log_r = log_accept_ratio(
        bank.theta(idx),
        block.theta,
        mu,
        tau2,
        bank.meta.stage1_theta_prior,
        mode,
    )?;
    let accepted = u.ln() < log_r;
    if accepted {
        bank.load_row_into(idx, block);
    }
    Ok(accepted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAcceptance {
    pub group_id: u64,
    pub proposals: u64,
    pub accepts: u64,
}

impl GroupAcceptance {
    pub fn rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepts as f64 / self.proposals as f64
        }
    }
}

/// Per-group acceptance counts over every stage-2 iteration, burn-in included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhStats {
    pub groups: Vec<GroupAcceptance>,
}

impl MhStats {
    pub fn rates(&self) -> Vec<(u64, f64)> {
        self.groups.iter().map(|g| (g.group_id, g.rate())).collect()
    }

    pub fn min_rate(&self) -> f64 {
        self.groups.iter().map(GroupAcceptance::rate).fold(1.0, f64::min)
    }
}

/// Acceptance rates below this are logged as poor bank coverage.
pub const LOW_ACCEPTANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Settings {
    pub run: RunLength,
    pub seed: u64,
    pub mode: RatioMode,
    pub parallel_groups: bool,
    /// Hold mu at this value (a point-mass hyperprior) instead of sampling it.
    pub fix_mu: Option<f64>,
    /// Hold tau2 at this value instead of sampling it.
    pub fix_tau2: Option<f64>,
}

impl Stage2Settings {
    pub fn new(run: RunLength, seed: u64) -> Self {
        Stage2Settings {
            run,
            seed,
            mode: RatioMode::Exact,
            parallel_groups: false,
            fix_mu: None,
            fix_tau2: None,
        }
    }
}

fn check_banks(banks: &[SampleBank], spec: &ModelSpec) -> Result<()> {
    if banks.is_empty() {
        return Err(H2sError::input("stage 2 needs one bank per group; got none"));
    }
    for pair in banks.windows(2) {
        if pair[0].group_id >= pair[1].group_id {
            return Err(H2sError::input(format!(
                "banks must have distinct group ids in ascending order (saw {} then {})",
                pair[0].group_id, pair[1].group_id
            )));
        }
    }
    for b in banks {
        if b.depth() != spec.depth {
            return Err(H2sError::input(format!(
                "layout mismatch: bank for group {} holds a depth-{} layout but the model has depth {}",
                b.group_id,
                b.depth(),
                spec.depth
            )));
        }
        if b.meta.prior_sigma2 != spec.prior_sigma2 {
            return Err(H2sError::input(format!(
                "bank for group {} used sigma2 prior {:?}, the model uses {:?}; the acceptance ratio only cancels when they agree",
                b.group_id, b.meta.prior_sigma2, spec.prior_sigma2
            )));
        }
        if let Some(eta) = b.meta.prior_eta2 {
            if eta != spec.prior_eta2 {
                return Err(H2sError::input(format!(
                    "bank for group {} used eta2 prior {eta:?}, the model uses {:?}",
                    b.group_id, spec.prior_eta2
                )));
            }
        }
        if b.meta.stage1_theta_prior != spec.stage1_theta_prior {
            log::warn!(
                "bank for group {} was drawn under stage-1 theta prior {:?}; using it instead of {:?}",
                b.group_id,
                b.meta.stage1_theta_prior,
                spec.stage1_theta_prior
            );
        }
    }
    Ok(())
}

pub const INITIALIZATION: &str = "each group block set to a uniformly drawn row of its bank; \
     tau2 at the sample variance of the initial thetas (floored at 1e-6); mu drawn first";

/// Runs stage 2 over `banks` (one per group, ascending group id).
pub fn run_stage2(banks: &[SampleBank], spec: &ModelSpec, settings: &Stage2Settings) -> Result<(ChainStore, MhStats)> {
    spec.validate()?;
    settings.run.validate()?;
    check_banks(banks, spec)?;
    if let Some(t) = settings.fix_tau2 {
        if !(t > 0.0 && t.is_finite()) {
            return Err(H2sError::input(format!("fixed tau2 must be positive, got {t}")));
        }
    }

    let mut global_rng = rng::stream(settings.seed, domain::STAGE2_GLOBAL, 0);
    let mut group_rngs: Vec<StreamRng> = banks
        .iter()
        .map(|b| rng::stream(settings.seed, domain::STAGE2_GROUP, b.group_id))
        .collect();

    let groups: Vec<GroupState> = banks
        .iter()
        .zip(group_rngs.iter_mut())
        .map(|(b, r)| b.block(r.random_range(0..b.rows())))
        .collect();
    let thetas: Vec<f64> = groups.iter().map(|g| g.theta).collect();
    let mut state = ChainState {
        mu: f64::NAN,
        tau2: settings.fix_tau2.unwrap_or_else(|| spread(&thetas)),
        groups,
    };

    let mut extra = BTreeMap::new();
    extra.insert("model".into(), serde_json::to_value(spec).unwrap_or_default());
    extra.insert("ratio_mode".into(), serde_json::to_value(settings.mode).unwrap_or_default());
    extra.insert(
        "bank_sizes".into(),
        serde_json::to_value(banks.iter().map(|b| (b.group_id, b.rows())).collect::<Vec<_>>())
            .unwrap_or_default(),
    );
    if let Some(m) = settings.fix_mu {
        extra.insert("fixed_mu".into(), m.into());
    }
    if let Some(t) = settings.fix_tau2 {
        extra.insert("fixed_tau2".into(), t.into());
    }
    let meta = ChainMeta {
        sampler: "two-stage".into(),
        depth: spec.depth,
        iterations: settings.run.iterations,
        burn_in: settings.run.burn_in,
        thin: settings.run.thin,
        seed: settings.seed,
        scan_order: "mu, tau2, then one MH block proposal per group by ascending id".into(),
        initialization: INITIALIZATION.into(),
        tool_version: tool_version(),
        extra,
    };
    let mut store = ChainStore::for_state(meta, &state);
    let mut accepts = vec![0u64; banks.len()];

    let mut thetas = vec![0.0; banks.len()];
    for t in 0..settings.run.iterations {
        for (slot, g) in thetas.iter_mut().zip(&state.groups) {
            *slot = g.theta;
        }
        state.mu = match settings.fix_mu {
            Some(m) => m,
            None => draw_mu(&thetas, state.tau2, spec.hyper_mu, &mut global_rng)?,
        };
        state.tau2 = match settings.fix_tau2 {
            Some(v) => v,
            None => draw_tau2(&thetas, state.mu, spec.hyper_tau2, &mut global_rng)?,
        };

        let (mu, tau2, mode) = (state.mu, state.tau2, settings.mode);
        let step = |(((block, bank), r), acc): (((&mut GroupState, &SampleBank), &mut StreamRng), &mut u64)| {
            if mh_group_update(block, bank, mu, tau2, mode, r)? {
                *acc += 1;
            }
            Ok::<(), H2sError>(())
        };
        if settings.parallel_groups {
            state
                .groups
                .par_iter_mut()
                .zip(banks.par_iter())
                .zip(group_rngs.par_iter_mut())
                .zip(accepts.par_iter_mut())
                .try_for_each(step)?;
        } else {
            state
                .groups
                .iter_mut()
                .zip(banks.iter())
                .zip(group_rngs.iter_mut())
                .zip(accepts.iter_mut())
                .try_for_each(step)?;
        }
        if !(state.mu.is_finite() && state.tau2 > 0.0 && state.tau2.is_finite()) {
            return Err(H2sError::Numerical(format!(
                "stage 2 iteration {t}: mu = {}, tau2 = {}",
                state.mu, state.tau2
            )));
        }
        if settings.run.keeps(t) {
            store.push_state(&state);
        }
    }

    let stats = MhStats {
        groups: banks
            .iter()
            .zip(&accepts)
            .map(|(b, &a)| GroupAcceptance {
                group_id: b.group_id,
                proposals: settings.run.iterations,
                accepts: a,
            })
            .collect(),
    };
    for g in &stats.groups {
        if g.rate() < LOW_ACCEPTANCE {
            log::warn!(
                "group {}: stage-2 acceptance rate {:.4} is below {LOW_ACCEPTANCE}; its bank covers the full-model conditional poorly",
                g.group_id,
                g.rate()
            );
        }
    }
    Ok((store, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{bank_columns, BankMeta};
    use crate::model::{Depth, InvGammaPrior};
    use rand::SeedableRng;

    fn vague() -> NormalPrior {
        NormalPrior {
            mean: 0.0,
            variance: 1e6,
        }
    }

    fn bank(group_id: u64, thetas: &[f64]) -> SampleBank {
        let meta = BankMeta {
            depth: Depth::Three,
            stage1_theta_prior: vague(),
            prior_sigma2: ModelSpec::three_level().prior_sigma2,
            prior_eta2: None,
            seed: 0,
            burn_in: 0,
            thin: 1,
            n_observations: 1,
            tool_version: "t".into(),
        };
        let draws = thetas.iter().flat_map(|&t| [t, 1.0 + t.abs()]).collect();
        SampleBank::new(group_id, meta, bank_columns(&[]), draws).unwrap()
    }

    #[test]
    fn identity_proposal_is_exactly_zero() {
        for &theta in &[-3.0, 0.0, 20.0, 1e4] {
            for mode in [RatioMode::Exact, RatioMode::Uniform] {
                assert_eq!(log_accept_ratio(theta, theta, 25.0, 1.5, vague(), mode).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn ratio_reference_values() {
        let exact = log_accept_ratio(25.0, 20.0, 25.0, 1.5, vague(), RatioMode::Exact).unwrap();
        let uniform = log_accept_ratio(25.0, 20.0, 25.0, 1.5, vague(), RatioMode::Uniform).unwrap();
        assert!((uniform - 25.0 / 3.0).abs() < 1e-12);
        assert!((exact - (25.0 / 3.0 + 225.0 / 2e6)).abs() < 1e-12);
        assert!((exact - 8.333_445_8).abs() < 1e-7);
    }

    #[test]
    fn ratio_needs_positive_tau2() {
        assert!(log_accept_ratio(1.0, 2.0, 0.0, 0.0, vague(), RatioMode::Exact).is_err());
    }

    #[test]
    fn single_row_bank() {
        let b = bank(1, &[2.5]);
        let mut block = b.block(0);
        block.theta = 10.0;
        let mut rng = StreamRng::seed_from_u64(3);
        let mut accepted_once = false;
        for _ in 0..200 {
            accepted_once |= mh_group_update(&mut block, &b, 2.0, 1.0, RatioMode::Exact, &mut rng).unwrap();
        }
        assert!(accepted_once);
        assert_eq!(block, b.block(0));
    }

    #[test]
    fn minimal_run_keeps_one_draw() {
        let banks = vec![bank(1, &[1.0, 2.0]), bank(2, &[3.0, 4.0])];
        let run = RunLength::new(5, 4, 1).unwrap();
        let (store, stats) = run_stage2(&banks, &ModelSpec::three_level(), &Stage2Settings::new(run, 1)).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(stats.groups[0].proposals, 5);
    }

    #[test]
    fn rejects_mismatched_layouts_and_priors() {
        let banks = vec![bank(1, &[1.0])];
        let run = RunLength::new(5, 1, 1).unwrap();
        let err = run_stage2(&banks, &ModelSpec::four_level(), &Stage2Settings::new(run, 1)).unwrap_err();
        assert!(err.to_string().contains("layout mismatch"), "{err}");

        let mut spec = ModelSpec::three_level();
        spec.prior_sigma2 = InvGammaPrior { shape: 1.0, rate: 1.0 };
        assert!(run_stage2(&banks, &spec, &Stage2Settings::new(run, 1)).is_err());

        let dup = vec![bank(1, &[1.0]), bank(1, &[2.0])];
        assert!(run_stage2(&dup, &ModelSpec::three_level(), &Stage2Settings::new(run, 1)).is_err());
        assert!(run_stage2(&[], &ModelSpec::three_level(), &Stage2Settings::new(run, 1)).is_err());
    }

    #[test]
    fn parallel_matches_serial() {
        let banks: Vec<_> = (1..=6)
            .map(|g| bank(g, &[g as f64, g as f64 + 0.5, g as f64 - 0.3]))
            .collect();
        let run = RunLength::new(300, 30, 2).unwrap();
        let serial = Stage2Settings::new(run, 9);
        let parallel = Stage2Settings {
            parallel_groups: true,
            ..serial
        };
        let spec = ModelSpec::three_level();
        assert_eq!(
            run_stage2(&banks, &spec, &serial).unwrap(),
            run_stage2(&banks, &spec, &parallel).unwrap()
        );
    }
}
