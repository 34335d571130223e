//! Convergence diagnostics: split R-hat and effective sample size.

use crate::error::{H2sError, Result};

/// Split R-hat of a single chain: the chain is cut into halves (dropping the
/// middle draw when the length is odd) and compared as two chains.
///
/// Returns +inf, with a warning, when the within-half variance is zero.
pub fn split_rhat(chain: &[f64]) -> Result<f64> {
    if chain.len() < 4 {
        return Err(H2sError::input(format!("split R-hat needs at least 4 draws, got {}", chain.len())));
    }
    let n = chain.len() / 2;
    let halves = [&chain[..n], &chain[chain.len() - n..]];
    let stats: Vec<(f64, f64)> = halves
        .iter()
        .map(|h| {
            let m = h.iter().sum::<f64>() / n as f64;
            let v = h.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0);
            (m, v)
        })
        .collect();
    let w = (stats[0].1 + stats[1].1) / 2.0;
    if !(w > 0.0) {
        log::warn!("split R-hat: within-chain variance is zero");
        return Ok(f64::INFINITY);
    }
    let grand = (stats[0].0 + stats[1].0) / 2.0;
    // B / n with m - 1 = 1
    let b_over_n = stats.iter().map(|s| (s.0 - grand) * (s.0 - grand)).sum::<f64>();
    let nf = n as f64;
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    Ok((var_plus / w).sqrt())
}

fn autocovariance(x: &[f64], mean: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag]
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum::<f64>()
        / n as f64
}

/// Effective sample size via Geyer's initial monotone positive sequence.
/// Clamped to `(0, N]`; a constant chain returns N with a warning.
pub fn effective_sample_size(chain: &[f64]) -> Result<f64> {
    let n = chain.len();
    if n < 10 {
        return Err(H2sError::input(format!("ESS needs at least 10 draws, got {n}")));
    }
    let mean = chain.iter().sum::<f64>() / n as f64;
    let g0 = autocovariance(chain, mean, 0);
    if !(g0 > 0.0) {
        log::warn!("ESS: chain is constant");
        return Ok(n as f64);
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let r0 = if m == 0 { 1.0 } else { autocovariance(chain, mean, 2 * m) / g0 };
        let r1 = autocovariance(chain, mean, 2 * m + 1) / g0;
        let mut pair = r0 + r1;
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev);
        prev = pair;
        sum += pair;
        m += 1;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / n as f64);
    Ok((n as f64 / tau).min(n as f64))
}
