//! Closed-form full conditionals of the Normal / Inverse-Gamma hierarchy.
//!
//! Each `*_conditional` returns the conditional distribution itself; the
//! matching `draw_*` samples it. Inverse-Gamma variates are the reciprocal of
//! a Gamma(shape, rate) draw.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{H2sError, Result};
use crate::model::{InvGammaPrior, NormalPrior, SuffStats};

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(H2sError::domain(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

pub fn sample_normal<R: Rng + ?Sized>(dist: NormalPrior, rng: &mut R) -> Result<f64> {
    let n = Normal::new(dist.mean, dist.variance.sqrt())
        .map_err(|e| H2sError::domain(format!("normal({}, {}): {e}", dist.mean, dist.variance)))?;
    Ok(n.sample(rng))
}

pub fn sample_invgamma<R: Rng + ?Sized>(dist: InvGammaPrior, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(dist.shape, 1.0 / dist.rate).map_err(|e| {
        H2sError::domain(format!("inverse-gamma({}, {}): {e}", dist.shape, dist.rate))
    })?;
    let x = 1.0 / g.sample(rng);
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(H2sError::Numerical(format!(
            "inverse-gamma({}, {}) draw overflowed to {x}",
            dist.shape, dist.rate
        )))
    }
}

/// Normal-Normal update: `n` values with known spread `var` centred on the
/// unknown mean, combined with a Normal(prior_mean, prior_var) prior.
fn normal_update(count: f64, sum: f64, var: f64, prior_mean: f64, prior_var: f64) -> NormalPrior {
    let precision = count / var + 1.0 / prior_var;
    let variance = 1.0 / precision;
    NormalPrior {
        mean: variance * (sum / var + prior_mean / prior_var),
        variance,
    }
}

/// mu | theta, tau2.
pub fn mu_conditional(thetas: &[f64], tau2: f64, prior: NormalPrior) -> Result<NormalPrior> {
    positive("tau2", tau2)?;
    if thetas.is_empty() {
        return Err(H2sError::input("mu conditional needs at least one theta"));
    }
    let sum: f64 = thetas.iter().sum();
    Ok(normal_update(
        thetas.len() as f64,
        sum,
        tau2,
        prior.mean,
        prior.variance,
    ))
}

pub fn draw_mu<R: Rng + ?Sized>(
    thetas: &[f64],
    tau2: f64,
    prior: NormalPrior,
    rng: &mut R,
) -> Result<f64> {
    sample_normal(mu_conditional(thetas, tau2, prior)?, rng)
}

/// tau2 | theta, mu.
pub fn tau2_conditional(thetas: &[f64], mu: f64, prior: InvGammaPrior) -> Result<InvGammaPrior> {
    if thetas.is_empty() {
        return Err(H2sError::input("tau2 conditional needs at least one theta"));
    }
    let ss: f64 = thetas.iter().map(|t| (t - mu) * (t - mu)).sum();
    if !ss.is_finite() {
        return Err(H2sError::domain("non-finite theta residuals"));
    }
    Ok(InvGammaPrior {
        shape: prior.shape + 0.5 * thetas.len() as f64,
        rate: prior.rate + 0.5 * ss,
    })
}

pub fn draw_tau2<R: Rng + ?Sized>(
    thetas: &[f64],
    mu: f64,
    prior: InvGammaPrior,
    rng: &mut R,
) -> Result<f64> {
    sample_invgamma(tau2_conditional(thetas, mu, prior)?, rng)
}

/// theta_i | y_i, sigma2_i, mu, tau2. Also serves delta_ij (data = cell,
/// prior = Normal(theta_i, sigma2_i)) and the depth-4 theta_i (data = the
/// group's deltas).
pub fn theta_conditional(stats: &SuffStats, sigma2: f64, mu: f64, tau2: f64) -> Result<NormalPrior> {
    positive("sigma2", sigma2)?;
    positive("tau2", tau2)?;
    if stats.count == 0 {
        return Err(H2sError::input("theta conditional needs at least one observation"));
    }
    Ok(normal_update(stats.count as f64, stats.sum, sigma2, mu, tau2))
}

pub fn draw_theta_i<R: Rng + ?Sized>(
    stats: &SuffStats,
    sigma2: f64,
    mu: f64,
    tau2: f64,
    rng: &mut R,
) -> Result<f64> {
    sample_normal(theta_conditional(stats, sigma2, mu, tau2)?, rng)
}

/// sigma2_i | y_i, theta_i.
pub fn sigma2_conditional(stats: &SuffStats, theta: f64, prior: InvGammaPrior) -> Result<InvGammaPrior> {
    if !theta.is_finite() {
        return Err(H2sError::domain("theta must be finite"));
    }
    Ok(InvGammaPrior {
        shape: prior.shape + 0.5 * stats.count as f64,
        rate: prior.rate + 0.5 * stats.residual_ss(theta),
    })
}

pub fn draw_sigma2_i<R: Rng + ?Sized>(
    stats: &SuffStats,
    theta: f64,
    prior: InvGammaPrior,
    rng: &mut R,
) -> Result<f64> {
    sample_invgamma(sigma2_conditional(stats, theta, prior)?, rng)
}

/// Sufficient statistics of a slice of latent values (the deltas of a group).
pub(crate) fn latent_stats(values: impl Iterator<Item = f64>) -> SuffStats {
    let mut s = SuffStats {
        count: 0,
        sum: 0.0,
        sum_sq: 0.0,
    };
    for v in values {
        s.count += 1;
        s.sum += v;
        s.sum_sq += v * v;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use rand::SeedableRng;

    fn vague() -> NormalPrior {
        NormalPrior {
            mean: 0.0,
            variance: 1e6,
        }
    }

    #[test]
    fn mu_degenerate_concentration() {
        let mut rng = StreamRng::seed_from_u64(1);
        for _ in 0..100 {
            let m = draw_mu(&[2.0, 2.0, 2.0], 1e-12, vague(), &mut rng).unwrap();
            assert!((m - 2.0).abs() < 1e-5);
        }
    }

    #[test]
    fn mu_two_thetas_closed_form() {
        let c = mu_conditional(&[1.0, 3.0], 1.0, vague()).unwrap();
        let v = 1.0 / (2.0 + 1e-6);
        assert!((c.variance - v).abs() < 1e-15);
        assert!((c.mean - 4.0 * v).abs() < 1e-14);
        // 2 * (1 - 5e-7) to first order
        assert!((c.mean - 2.0 * (1.0 - 5e-7)).abs() < 1e-12);
        assert!((c.variance - 0.5).abs() < 1e-6);
    }

    #[test]
    fn mu_rejects_bad_tau2() {
        let mut rng = StreamRng::seed_from_u64(1);
        assert!(matches!(
            draw_mu(&[1.0], 0.0, vague(), &mut rng),
            Err(H2sError::Domain(_))
        ));
    }

    #[test]
    fn tau2_posterior_parameters() {
        let c = tau2_conditional(&[1.0, 3.0], 2.0, InvGammaPrior { shape: 0.1, rate: 0.1 }).unwrap();
        assert!((c.shape - 1.1).abs() < 1e-15);
        assert!((c.rate - 1.1).abs() < 1e-15);
        let c = tau2_conditional(&[2.0, 2.0], 2.0, InvGammaPrior { shape: 3.0, rate: 0.7 }).unwrap();
        assert_eq!((c.shape, c.rate), (4.0, 0.7));
    }

    #[test]
    fn theta_prior_washes_out() {
        let s = SuffStats::from_values(&[1.0, 2.0, 6.0, 3.0]).unwrap();
        let c = theta_conditional(&s, 2.0, 100.0, 1e12).unwrap();
        assert!((c.mean - 3.0).abs() < 1e-9);
        assert!((c.variance - 0.5).abs() < 1e-9);
    }

    #[test]
    fn sigma2_zero_residual() {
        let s = SuffStats::from_values(&[4.5]).unwrap();
        let prior = InvGammaPrior { shape: 0.01, rate: 0.01 };
        let c = sigma2_conditional(&s, 4.5, prior).unwrap();
        assert_eq!((c.shape, c.rate), (0.51, 0.01));
    }

    #[test]
    fn sigma2_rate_matches_pointwise_residuals() {
        let mut rng = StreamRng::seed_from_u64(77);
        let prior = InvGammaPrior { shape: 0.5, rate: 2.0 };
        for _ in 0..20 {
            let n = rng.random_range(1..300);
            let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
            let theta = rng.random_range(-5.0..5.0);
            let s = SuffStats::from_values(&ys).unwrap();
            let c = sigma2_conditional(&s, theta, prior).unwrap();
            let rss: f64 = ys.iter().map(|y| (y - theta) * (y - theta)).sum();
            assert!((c.shape - (0.5 + n as f64 / 2.0)).abs() < 1e-12);
            assert!((c.rate - (2.0 + rss / 2.0)).abs() < 1e-9 * c.rate);
        }
    }

    #[test]
    fn invgamma_draw_mean() {
        let mut rng = StreamRng::seed_from_u64(5);
        let d = InvGammaPrior { shape: 3.0, rate: 2.0 };
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| sample_invgamma(d, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn zero_residual_draws_follow_shifted_prior() {
        // sum (theta - mu)^2 = 0 with n = 2 gives IG(a + 1, b) exactly.
        let prior = InvGammaPrior { shape: 4.0, rate: 3.0 };
        let c = tau2_conditional(&[1.5, 1.5], 1.5, prior).unwrap();
        assert_eq!(c, InvGammaPrior { shape: 5.0, rate: 3.0 });
        let mut rng = StreamRng::seed_from_u64(11);
        let n = 200_000;
        let mean: f64 = (0..n)
            .map(|_| draw_tau2(&[1.5, 1.5], 1.5, prior, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean / 0.75 - 1.0).abs() < 0.01, "{mean}");
    }
}
