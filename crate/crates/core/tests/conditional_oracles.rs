//! Conjugate full conditionals checked against brute-force grid quadrature
//! of their unnormalized densities (prior times likelihood, written out
//! pointwise), and the samplers checked against the quadrature moments.

use h2s_core::conditional::{
    draw_mu, draw_sigma2_i, draw_tau2, draw_theta_i, mu_conditional, sigma2_conditional,
    tau2_conditional, theta_conditional,
};
use h2s_core::model::{log_invgamma_density, log_normal_density, InvGammaPrior, NormalPrior, SuffStats};
use h2s_core::rng::StreamRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

const INSTANCES: u64 = 20;
const DRAWS: usize = 1_000_000;
const QUAD_POINTS: usize = 400_001;

/// Mean and variance of the density proportional to `exp(log_f(x))` by
/// trapezoid quadrature on a uniform grid over `[lo, hi]`.
fn quad_moments(lo: f64, hi: f64, log_f: impl Fn(f64) -> f64) -> (f64, f64) {
    let h = (hi - lo) / (QUAD_POINTS - 1) as f64;
    let xs: Vec<f64> = (0..QUAD_POINTS).map(|k| lo + k as f64 * h).collect();
    let lf: Vec<f64> = xs.iter().map(|&x| log_f(x)).collect();
    let peak = lf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lf
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let end = if k == 0 || k == QUAD_POINTS - 1 { 0.5 } else { 1.0 };
            end * (l - peak).exp()
        })
        .collect();
    let z: f64 = w.iter().sum();
    let m = xs.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / z;
    let v = xs.iter().zip(&w).map(|(x, w)| (x - m) * (x - m) * w).sum::<f64>() / z;
    // the grid must cover the mass: both ends negligible
    assert!(lf[0] - peak < -40.0 && lf[QUAD_POINTS - 1] - peak < -40.0, "grid too narrow");
    (m, v)
}

/// Same for a positive variable, integrating on `u = ln x` with Jacobian.
fn quad_moments_positive(log_f: impl Fn(f64) -> f64, center: f64, half_width: f64) -> (f64, f64) {
    let c = center.ln();
    let h = (2.0 * half_width) / (QUAD_POINTS - 1) as f64;
    let us: Vec<f64> = (0..QUAD_POINTS).map(|k| c - half_width + k as f64 * h).collect();
    let lf: Vec<f64> = us.iter().map(|&u| log_f(u.exp()) + u).collect();
    let peak = lf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(lf[0] - peak < -40.0 && lf[QUAD_POINTS - 1] - peak < -40.0, "grid too narrow");
    let w: Vec<f64> = lf.iter().map(|l| (l - peak).exp()).collect();
    let z: f64 = w.iter().sum();
    let m = us.iter().zip(&w).map(|(u, w)| u.exp() * w).sum::<f64>() / z;
    let v = us.iter().zip(&w).map(|(u, w)| (u.exp() - m).powi(2) * w).sum::<f64>() / z;
    (m, v)
}

fn empirical(mut draw: impl FnMut() -> f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..DRAWS).map(|_| draw()).collect();
    let m = xs.iter().sum::<f64>() / DRAWS as f64;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (DRAWS as f64 - 1.0);
    (m, v)
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn assert_close(what: &str, seed: u64, quad: (f64, f64), analytic: (f64, f64), drawn: (f64, f64)) {
    assert!(rel(analytic.0, quad.0) < 1e-3, "{what} seed {seed}: analytic mean {} vs quadrature {}", analytic.0, quad.0);
    assert!(rel(analytic.1, quad.1) < 1e-3, "{what} seed {seed}: analytic var {} vs quadrature {}", analytic.1, quad.1);
    assert!(rel(drawn.0, quad.0) < 0.01, "{what} seed {seed}: drawn mean {} vs quadrature {}", drawn.0, quad.0);
    assert!(rel(drawn.1, quad.1) < 0.01, "{what} seed {seed}: drawn var {} vs quadrature {}", drawn.1, quad.1);
}

fn ig_moments(p: InvGammaPrior) -> (f64, f64) {
    (p.rate / (p.shape - 1.0), p.rate * p.rate / ((p.shape - 1.0).powi(2) * (p.shape - 2.0)))
}

#[test]
fn mu_conditional_matches_quadrature() {
    let prior = NormalPrior { mean: 0.0, variance: 1e6 };
    for seed in 0..INSTANCES {
        let mut rng = StreamRng::seed_from_u64(1000 + seed);
        let n = rng.random_range(5..30);
        let tau2: f64 = rng.random_range(0.5..5.0);
        let thetas: Vec<f64> = (0..n).map(|_| rng.random_range(20.0..30.0)).collect();
        let lo = thetas.iter().cloned().fold(f64::INFINITY, f64::min) - 10.0 * tau2.sqrt();
        let hi = thetas.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 10.0 * tau2.sqrt();
        let quad = quad_moments(lo, hi, |mu| {
            thetas.iter().map(|&t| log_normal_density(t, mu, tau2).unwrap()).sum::<f64>()
                + log_normal_density(mu, prior.mean, prior.variance).unwrap()
        });
        let c = mu_conditional(&thetas, tau2, prior).unwrap();
        let drawn = empirical(|| draw_mu(&thetas, tau2, prior, &mut rng).unwrap());
        assert_close("mu", seed, quad, (c.mean, c.variance), drawn);
    }
}

#[test]
fn tau2_conditional_matches_quadrature() {
    let prior = InvGammaPrior { shape: 0.1, rate: 0.1 };
    for seed in 0..INSTANCES {
        let mut rng = StreamRng::seed_from_u64(2000 + seed);
        let n = rng.random_range(100..200);
        let mu = rng.random_range(20.0..30.0);
        let spread = Normal::new(mu, rng.random_range(0.5f64..3.0)).unwrap();
        let thetas: Vec<f64> = (0..n).map(|_| spread.sample(&mut rng)).collect();
        let ss: f64 = thetas.iter().map(|t| (t - mu) * (t - mu)).sum();
        let quad = quad_moments_positive(
            |tau2| {
                thetas.iter().map(|&t| log_normal_density(t, mu, tau2).unwrap()).sum::<f64>()
                    + log_invgamma_density(tau2, prior.shape, prior.rate).unwrap()
            },
            ss / n as f64,
            3.0,
        );
        let c = tau2_conditional(&thetas, mu, prior).unwrap();
        let drawn = empirical(|| draw_tau2(&thetas, mu, prior, &mut rng).unwrap());
        assert_close("tau2", seed, quad, ig_moments(c), drawn);
    }
}

#[test]
fn theta_conditional_matches_quadrature() {
    for seed in 0..INSTANCES {
        let mut rng = StreamRng::seed_from_u64(3000 + seed);
        let m = rng.random_range(5..200);
        let sigma2 = rng.random_range(1.0..20.0);
        let mu = rng.random_range(20.0..30.0);
        let tau2: f64 = rng.random_range(0.5..5.0);
        let obs = Normal::new(rng.random_range(20.0..30.0), f64::sqrt(sigma2)).unwrap();
        let ys: Vec<f64> = (0..m).map(|_| obs.sample(&mut rng)).collect();
        let stats = SuffStats::from_values(&ys).unwrap();
        let ybar = stats.mean();
        let quad = quad_moments(ybar - 15.0, ybar + 15.0, |theta| {
            ys.iter().map(|&y| log_normal_density(y, theta, sigma2).unwrap()).sum::<f64>()
                + log_normal_density(theta, mu, tau2).unwrap()
        });
        let c = theta_conditional(&stats, sigma2, mu, tau2).unwrap();
        let drawn = empirical(|| draw_theta_i(&stats, sigma2, mu, tau2, &mut rng).unwrap());
        assert_close("theta", seed, quad, (c.mean, c.variance), drawn);
    }
}

#[test]
fn sigma2_conditional_matches_quadrature() {
    // eta2 at depth 4 uses the same conditional with its own prior
    let priors = [InvGammaPrior { shape: 0.01, rate: 0.01 }, InvGammaPrior { shape: 0.1, rate: 0.1 }];
    for seed in 0..INSTANCES {
        let mut rng = StreamRng::seed_from_u64(4000 + seed);
        let prior = priors[(seed % 2) as usize];
        let m = rng.random_range(100..400);
        let theta = rng.random_range(20.0..30.0);
        let obs = Normal::new(theta, rng.random_range(1.0f64..4.0)).unwrap();
        let ys: Vec<f64> = (0..m).map(|_| obs.sample(&mut rng)).collect();
        let stats = SuffStats::from_values(&ys).unwrap();
        let ss: f64 = ys.iter().map(|y| (y - theta) * (y - theta)).sum();
        let quad = quad_moments_positive(
            |s2| {
                ys.iter().map(|&y| log_normal_density(y, theta, s2).unwrap()).sum::<f64>()
                    + log_invgamma_density(s2, prior.shape, prior.rate).unwrap()
            },
            ss / m as f64,
            3.0,
        );
        let c = sigma2_conditional(&stats, theta, prior).unwrap();
        let drawn = empirical(|| draw_sigma2_i(&stats, theta, prior, &mut rng).unwrap());
        assert_close("sigma2", seed, quad, ig_moments(c), drawn);
    }
}

#[test]
fn reference_instances() {
    let vague = NormalPrior { mean: 0.0, variance: 1e6 };
    let c = mu_conditional(&[1.0, 3.0], 1.0, vague).unwrap();
    assert!((c.mean - 2.0 * (1.0 - 5e-7)).abs() < 1e-9);
    assert!((c.variance - 0.5).abs() < 1e-6);

    // zero residual: IG(a + n/2, b) exactly
    let p = tau2_conditional(&[2.0, 2.0], 2.0, InvGammaPrior { shape: 3.0, rate: 4.0 }).unwrap();
    assert_eq!(p, InvGammaPrior { shape: 4.0, rate: 4.0 });

    let mut rng = StreamRng::seed_from_u64(5);
    let d = draw_mu(&[2.0, 2.0, 2.0], 1e-12, vague, &mut rng).unwrap();
    assert!((d - 2.0).abs() < 1e-5);
}
