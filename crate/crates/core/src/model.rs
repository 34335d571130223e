//! Model specification, log densities and sufficient statistics for the
//! nested Normal / Inverse-Gamma hierarchy.
//!
//! Depth 3:
//!
//! ```text
//! y_ij   | theta_i, sigma2_i ~ Normal(theta_i, sigma2_i)
//! theta_i | mu, tau2         ~ Normal(mu, tau2)
//! sigma2_i                   ~ InvGamma(a_sigma, b_sigma)
//! mu ~ Normal(m0, v0),  tau2 ~ InvGamma(a_tau, b_tau)
//! ```
//!
//! Depth 4 inserts a cell level between the observations and the group:
//!
//! ```text
//! y_ijk    | delta_ij, eta2_ij  ~ Normal(delta_ij, eta2_ij)
//! delta_ij | theta_i, sigma2_i  ~ Normal(theta_i, sigma2_i)
//! eta2_ij                      ~ InvGamma(a_eta, b_eta)
//! ```
//!
//! Inverse-Gamma is always the shape/rate form with density
//! `b^a / Gamma(a) * x^-(a+1) * exp(-b/x)`, the convention used by BUGS/JAGS.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{H2sError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Number of levels in the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Depth {
    Three,
    Four,
}

impl Depth {
    pub fn levels(self) -> u8 {
        match self {
            Depth::Three => 3,
            Depth::Four => 4,
        }
    }

    /// The only split level implemented for this depth.
    pub fn default_split_level(self) -> u8 {
        match self {
            Depth::Three => 2,
            Depth::Four => 3,
        }
    }
}

impl TryFrom<u8> for Depth {
    type Error = H2sError;

    fn try_from(value: u8) -> Result<Self> {
        match value {
            3 => Ok(Depth::Three),
            4 => Ok(Depth::Four),
            other => Err(H2sError::input(format!(
                "model depth must be 3 or 4, got {other}"
            ))),
        }
    }
}

impl From<Depth> for u8 {
    fn from(d: Depth) -> u8 {
        d.levels()
    }
}

impl std::fmt::Display for Depth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.levels())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub variance: f64,
}

impl NormalPrior {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        let p = NormalPrior { mean, variance };
        p.validate("normal prior")?;
        Ok(p)
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if !self.mean.is_finite() {
            return Err(H2sError::input(format!("{what}: mean must be finite")));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(H2sError::input(format!(
                "{what}: variance must be positive and finite, got {}",
                self.variance
            )));
        }
        Ok(())
    }

    pub fn ln_pdf(&self, x: f64) -> Result<f64> {
        log_normal_density(x, self.mean, self.variance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvGammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl InvGammaPrior {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        let p = InvGammaPrior { shape, rate };
        p.validate("inverse-gamma prior")?;
        Ok(p)
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.shape) || !ok(self.rate) {
            return Err(H2sError::input(format!(
                "{what}: shape and rate must be positive and finite, got ({}, {})",
                self.shape, self.rate
            )));
        }
        Ok(())
    }

    pub fn ln_pdf(&self, x: f64) -> Result<f64> {
        log_invgamma_density(x, self.shape, self.rate)
    }

    /// `rate / (shape - 1)`, defined for shape > 1.
    pub fn mean(&self) -> Option<f64> {
        (self.shape > 1.0).then(|| self.rate / (self.shape - 1.0))
    }

    /// Defined for shape > 2.
    pub fn variance(&self) -> Option<f64> {
        (self.shape > 2.0).then(|| {
            let a = self.shape;
            self.rate * self.rate / ((a - 1.0) * (a - 1.0) * (a - 2.0))
        })
    }
}

/// Depth, split level and every prior hyperparameter of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub depth: Depth,
    pub split_level: u8,
    pub hyper_mu: NormalPrior,
    pub hyper_tau2: InvGammaPrior,
    pub prior_sigma2: InvGammaPrior,
    /// Only read at depth 4.
    pub prior_eta2: InvGammaPrior,
    /// Independent prior placed on each theta_i by the detached stage-1 model.
    pub stage1_theta_prior: NormalPrior,
}

impl ModelSpec {
    /// Priors of the simulation study: mu ~ N(0, 1e6), tau2 ~ IG(0.1, 0.1),
    /// sigma2 ~ IG(0.01, 0.01), and a N(0, 1e6) stage-1 prior on theta.
    pub fn three_level() -> Self {
        ModelSpec {
            depth: Depth::Three,
            split_level: 2,
            hyper_mu: NormalPrior {
                mean: 0.0,
                variance: 1e6,
            },
            hyper_tau2: InvGammaPrior {
                shape: 0.1,
                rate: 0.1,
            },
            prior_sigma2: InvGammaPrior {
                shape: 0.01,
                rate: 0.01,
            },
            prior_eta2: InvGammaPrior {
                shape: 0.1,
                rate: 0.1,
            },
            stage1_theta_prior: NormalPrior {
                mean: 0.0,
                variance: 1e6,
            },
        }
    }

    /// Priors of the four-level airline model; eta2 ~ IG(0.1, 0.1).
    pub fn four_level() -> Self {
        ModelSpec {
            depth: Depth::Four,
            split_level: 3,
            ..Self::three_level()
        }
    }

    pub fn for_depth(depth: Depth) -> Self {
        match depth {
            Depth::Three => Self::three_level(),
            Depth::Four => Self::four_level(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let levels = self.depth.levels();
        if self.split_level < 1 || self.split_level >= levels {
            return Err(H2sError::input(format!(
                "split level must satisfy 1 <= c_s < {levels}, got {}",
                self.split_level
            )));
        }
        if self.split_level != self.depth.default_split_level() {
            return Err(H2sError::input(format!(
                "split level {} is not supported at depth {}; only {} is implemented",
                self.split_level,
                levels,
                self.depth.default_split_level()
            )));
        }
        self.hyper_mu.validate("mu prior")?;
        self.hyper_tau2.validate("tau2 prior")?;
        self.prior_sigma2.validate("sigma2 prior")?;
        self.prior_eta2.validate("eta2 prior")?;
        self.stage1_theta_prior.validate("stage-1 theta prior")?;
        Ok(())
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::three_level()
    }
}

/// Log of the Normal(mean, variance) density at `x`.
pub fn log_normal_density(x: f64, mean: f64, variance: f64) -> Result<f64> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(H2sError::domain(format!(
            "normal density needs a positive finite variance, got {variance}"
        )));
    }
    if !x.is_finite() || !mean.is_finite() {
        return Err(H2sError::domain("normal density arguments must be finite"));
    }
    let d = x - mean;
    Ok(-0.5 * (LN_2PI + variance.ln()) - d * d / (2.0 * variance))
}

/// Log of the shape/rate Inverse-Gamma density at `x`.
///
/// `x <= 0` is outside the support and reported as a domain error; use
/// [`log_invgamma_density_or_neg_inf`] where a log-zero is wanted instead.
pub fn log_invgamma_density(x: f64, shape: f64, rate: f64) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0) || !shape.is_finite() || !rate.is_finite() {
        return Err(H2sError::domain(format!(
            "inverse-gamma density needs positive shape and rate, got ({shape}, {rate})"
        )));
    }
    if !(x > 0.0) || !x.is_finite() {
        return Err(H2sError::domain(format!(
            "inverse-gamma density evaluated outside (0, inf) at {x}"
        )));
    }
    Ok(shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - rate / x)
}

/// As [`log_invgamma_density`], but returns `-inf` for `x <= 0`.
pub fn log_invgamma_density_or_neg_inf(x: f64, shape: f64, rate: f64) -> Result<f64> {
    if x <= 0.0 {
        if !(shape > 0.0 && rate > 0.0) {
            return Err(H2sError::domain("inverse-gamma shape and rate must be positive"));
        }
        return Ok(f64::NEG_INFINITY);
    }
    log_invgamma_density(x, shape, rate)
}

/// Count, sum and sum of squares of one group (or one cell).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuffStats {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl SuffStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(H2sError::input("cannot summarize an empty set of values"));
        }
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for &v in values {
            if !v.is_finite() {
                return Err(H2sError::input(format!("non-finite observation {v}")));
            }
            sum += v;
            sum_sq += v * v;
        }
        Ok(SuffStats {
            count: values.len() as u64,
            sum,
            sum_sq,
        })
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    /// `sum_j (y_j - center)^2`, clamped at zero against rounding.
    pub fn residual_ss(&self, center: f64) -> f64 {
        let n = self.count as f64;
        (self.sum_sq - 2.0 * center * self.sum + n * center * center).max(0.0)
    }

    /// Sample variance with denominator `count - 1`; `None` for a single value.
    pub fn sample_variance(&self) -> Option<f64> {
        if self.count < 2 {
            return None;
        }
        let n = self.count as f64;
        Some(self.residual_ss(self.mean()) / (n - 1.0))
    }
}

/// Observations of one top-level group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupData {
    pub group_id: u64,
    pub values: GroupValues,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroupValues {
    /// Depth 3: the y_ij of the group.
    Flat(Vec<f64>),
    /// Depth 4: cells in ascending cell-id order, each holding its y_ijk.
    Cells(Vec<Cell>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub cell_id: u64,
    pub values: Vec<f64>,
}

impl GroupData {
    pub fn depth(&self) -> Depth {
        match self.values {
            GroupValues::Flat(_) => Depth::Three,
            GroupValues::Cells(_) => Depth::Four,
        }
    }

    pub fn n_observations(&self) -> usize {
        match &self.values {
            GroupValues::Flat(v) => v.len(),
            GroupValues::Cells(cells) => cells.iter().map(|c| c.values.len()).sum(),
        }
    }

    pub fn cell_ids(&self) -> Vec<u64> {
        match &self.values {
            GroupValues::Flat(_) => Vec::new(),
            GroupValues::Cells(cells) => cells.iter().map(|c| c.cell_id).collect(),
        }
    }
}

/// Sufficient statistics of one group: a single record at depth 3, one per
/// cell at depth 4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GroupStats {
    Flat(SuffStats),
    Cells(Vec<(u64, SuffStats)>),
}

impl GroupStats {
    pub fn depth(&self) -> Depth {
        match self {
            GroupStats::Flat(_) => Depth::Three,
            GroupStats::Cells(_) => Depth::Four,
        }
    }
}

pub fn compute_stats(data: &GroupData) -> Result<GroupStats> {
    let ctx = |e: H2sError| match e {
        H2sError::Input(m) => H2sError::input(format!("group {}: {m}", data.group_id)),
        other => other,
    };
    match &data.values {
        GroupValues::Flat(values) => Ok(GroupStats::Flat(
            SuffStats::from_values(values).map_err(ctx)?,
        )),
        GroupValues::Cells(cells) => {
            if cells.is_empty() {
                return Err(H2sError::input(format!(
                    "group {} has no cells",
                    data.group_id
                )));
            }
            let mut out = Vec::with_capacity(cells.len());
            for cell in cells {
                let s = SuffStats::from_values(&cell.values).map_err(|e| match e {
                    H2sError::Input(m) => H2sError::input(format!(
                        "group {} cell {}: {m}",
                        data.group_id, cell.cell_id
                    )),
                    other => other,
                })?;
                out.push((cell.cell_id, s));
            }
            Ok(GroupStats::Cells(out))
        }
    }
}

/// Log-likelihood of one group's observations under Normal(theta, sigma2),
/// evaluated from sufficient statistics.
pub fn log_group_likelihood(stats: &SuffStats, theta: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(H2sError::domain(format!(
            "likelihood needs a positive variance, got {sigma2}"
        )));
    }
    let n = stats.count as f64;
    Ok(-0.5 * n * (LN_2PI + sigma2.ln()) - stats.residual_ss(theta) / (2.0 * sigma2))
}

/// Parameters of one sampler iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub mu: f64,
    pub tau2: f64,
    pub groups: Vec<GroupState>,
}

/// The block of parameters owned by one group. `cells` is empty at depth 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupState {
    pub group_id: u64,
    pub theta: f64,
    pub sigma2: f64,
    pub cells: Vec<CellState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub cell_id: u64,
    pub delta: f64,
    pub eta2: f64,
}

impl ChainState {
    pub fn check_finite(&self) -> Result<()> {
        let bad = |name: String, v: f64, positive: bool| {
            if !v.is_finite() || (positive && v <= 0.0) {
                Err(H2sError::Numerical(format!("{name} = {v}")))
            } else {
                Ok(())
            }
        };
        bad("mu".into(), self.mu, false)?;
        bad("tau2".into(), self.tau2, true)?;
        for g in &self.groups {
            bad(format!("theta[{}]", g.group_id), g.theta, false)?;
            bad(format!("sigma2[{}]", g.group_id), g.sigma2, true)?;
            for c in &g.cells {
                bad(format!("delta[{},{}]", g.group_id, c.cell_id), c.delta, false)?;
                bad(format!("eta2[{},{}]", g.group_id, c.cell_id), c.eta2, true)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn standard_normal_at_zero() {
        let v = log_normal_density(0.0, 0.0, 1.0).unwrap();
        assert!((v - (-0.918_938_533_204_672_7)).abs() < 1e-12);
    }

    #[test]
    fn normal_density_at_its_mean() {
        for &(m, v) in &[(0.0, 1.0), (25.0, 1.5), (-3.0, 1e6), (7.5, 1e-4)] {
            let got = log_normal_density(m, m, v).unwrap();
            let want = -0.5 * (2.0 * std::f64::consts::PI * v).ln();
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_quadratic_term_difference() {
        let a = log_normal_density(25.0, 25.0, 1.5).unwrap();
        let b = log_normal_density(20.0, 25.0, 1.5).unwrap();
        assert!((a - b - 25.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn normal_rejects_bad_variance() {
        assert!(matches!(
            log_normal_density(0.0, 0.0, 0.0),
            Err(H2sError::Domain(_))
        ));
        assert!(log_normal_density(0.0, 0.0, -1.0).is_err());
        assert!(log_normal_density(0.0, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn invgamma_unit_case() {
        assert!((log_invgamma_density(1.0, 1.0, 1.0).unwrap() + 1.0).abs() < 1e-14);
    }

    #[test]
    fn invgamma_formula_case() {
        let got = log_invgamma_density(2.0, 1.1, 1.1).unwrap();
        let want = 1.1 * 1.1f64.ln() - ln_gamma(1.1) - 2.1 * 2f64.ln() - 0.55;
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn invgamma_outside_support() {
        assert!(matches!(
            log_invgamma_density(0.0, 1.0, 1.0),
            Err(H2sError::Domain(_))
        ));
        assert!(log_invgamma_density(-1.0, 1.0, 1.0).is_err());
        assert_eq!(
            log_invgamma_density_or_neg_inf(-1.0, 1.0, 1.0).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(log_invgamma_density(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn stats_small_cases() {
        let s = SuffStats::from_values(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.count, s.sum, s.sum_sq), (3, 6.0, 14.0));
        let c = 4.25;
        let s = SuffStats::from_values(&[c]).unwrap();
        assert_eq!((s.count, s.sum, s.sum_sq), (1, c, c * c));
        assert!(SuffStats::from_values(&[]).is_err());
        assert!(SuffStats::from_values(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn stats_reject_empty_group_and_cell() {
        let g = GroupData {
            group_id: 7,
            values: GroupValues::Flat(vec![]),
        };
        let err = compute_stats(&g).unwrap_err().to_string();
        assert!(err.contains("group 7"), "{err}");

        let g = GroupData {
            group_id: 2,
            values: GroupValues::Cells(vec![
                Cell {
                    cell_id: 1,
                    values: vec![1.0],
                },
                Cell {
                    cell_id: 5,
                    values: vec![],
                },
            ]),
        };
        let err = compute_stats(&g).unwrap_err().to_string();
        assert!(err.contains("cell 5"), "{err}");
    }

    #[test]
    fn group_likelihood_small_cases() {
        let s = SuffStats::from_values(&[0.0]).unwrap();
        let v = log_group_likelihood(&s, 0.0, 1.0).unwrap();
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-12);

        let s = SuffStats::from_values(&[1.0, -1.0]).unwrap();
        let v = log_group_likelihood(&s, 0.0, 1.0).unwrap();
        assert!((v - (2.0 * -0.918_938_533_204_672_7 - 1.0)).abs() < 1e-12);

        assert!(log_group_likelihood(&s, 0.0, 0.0).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::three_level().validate().is_ok());
        assert!(ModelSpec::four_level().validate().is_ok());
        assert!(Depth::try_from(5).is_err());
        assert!(Depth::try_from(2).is_err());

        let mut s = ModelSpec::three_level();
        s.split_level = 3;
        assert!(s.validate().is_err());
        s.split_level = 0;
        assert!(s.validate().is_err());
        s.split_level = 1;
        assert!(s.validate().unwrap_err().to_string().contains("not supported"));

        let mut s = ModelSpec::three_level();
        s.hyper_mu.variance = 0.0;
        assert!(s.validate().is_err());
        let mut s = ModelSpec::three_level();
        s.hyper_tau2.shape = -1.0;
        assert!(s.validate().is_err());
        let mut s = ModelSpec::four_level();
        s.prior_eta2.rate = 0.0;
        assert!(s.validate().is_err());
        let mut s = ModelSpec::three_level();
        s.stage1_theta_prior.variance = f64::INFINITY;
        assert!(s.validate().is_err());
    }

    // Trapezoid rule in u = ln x over [-60, 700]; the tail beyond x = e^700
    // is integrated analytically from the x^-(a+1) asymptote.
    fn invgamma_total_mass(shape: f64, rate: f64) -> f64 {
        let (lo, hi) = (-60.0f64, 700.0f64);
        let n = 2_000_000;
        let h = (hi - lo) / n as f64;
        let f = |u: f64| (log_invgamma_density(u.exp(), shape, rate).unwrap() + u).exp();
        let mut acc = 0.5 * (f(lo) + f(hi));
        for k in 1..n {
            acc += f(lo + k as f64 * h);
        }
        let log_c = shape * rate.ln() - ln_gamma(shape);
        let tail = (log_c - shape * hi).exp() / shape;
        acc * h + tail
    }

    #[test]
    fn invgamma_normalizes_for_default_priors() {
        for (a, b) in [(0.01, 0.01), (0.1, 0.1), (1.1, 1.1), (3.0, 2.0)] {
            let mass = invgamma_total_mass(a, b);
            assert!((mass - 1.0).abs() < 1e-5, "IG({a},{b}) mass {mass}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn likelihood_matches_pointwise_sum(
            values in prop::collection::vec(-50.0f64..50.0, 1..200),
            theta in -50.0f64..50.0,
            sigma2 in 0.01f64..100.0,
        ) {
            let s = SuffStats::from_values(&values).unwrap();
            let fast = log_group_likelihood(&s, theta, sigma2).unwrap();
            let slow: f64 = values
                .iter()
                .map(|&y| log_normal_density(y, theta, sigma2).unwrap())
                .sum();
            prop_assert!((fast - slow).abs() <= 1e-9 * slow.abs().max(1.0));
        }

        #[test]
        fn stats_satisfy_cauchy_schwarz(values in prop::collection::vec(-1e3f64..1e3, 1..500)) {
            let s = SuffStats::from_values(&values).unwrap();
            let n = s.count as f64;
            prop_assert!(s.sum_sq * n >= s.sum * s.sum * (1.0 - 1e-12));
        }
    }
}
