//! Smoothed marginal densities and the relative L1 / L2 distances between
//! them.
//!
//! Densities are Gaussian-kernel estimates with Silverman's rule-of-thumb
//! bandwidth, evaluated on a uniform grid spanning three bandwidths past the
//! data and renormalized to unit trapezoid mass. Distances are trapezoid
//! integrals on a shared grid:
//!
//! ```text
//! d1(p, q) = int |p - q| / int |p|
//! d2(p, q) = sqrt(int (p - q)^2) / sqrt(int p^2)
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{H2sError, Result};

pub const DEFAULT_GRID_SIZE: usize = 512;

/// Kernel contributions beyond this many bandwidths are below 1e-17 and
/// skipped.
const KERNEL_CUTOFF: f64 = 9.0;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityEstimate {
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.values)
    }

    /// Linear interpolation, zero outside the grid.
    pub fn at(&self, x: f64) -> f64 {
        let g = &self.grid;
        if g.is_empty() || x < g[0] || x > g[g.len() - 1] {
            return 0.0;
        }
        let k = g.partition_point(|&v| v <= x);
        if k == 0 {
            return self.values[0];
        }
        if k >= g.len() {
            return self.values[g.len() - 1];
        }
        let (x0, x1) = (g[k - 1], g[k]);
        let w = (x - x0) / (x1 - x0);
        self.values[k - 1] * (1.0 - w) + self.values[k] * w
    }
}

pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|k| if k + 1 == n { hi } else { lo + k as f64 * step })
        .collect()
}

/// Linear-interpolation quantile of sorted data (R type 7).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_finite(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(H2sError::input("density estimation needs at least two samples"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(H2sError::input("density estimation got a non-finite sample"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`; falls back to the SD term when
/// the IQR is zero.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    bandwidth_sorted(&sorted_finite(samples)?)
}

fn bandwidth_sorted(sorted: &[f64]) -> Result<f64> {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Err(H2sError::input(
            "degenerate samples: all values are equal, so the bandwidth is zero",
        ))
    }
}

/// Evaluates the kernel estimate of `sorted` with bandwidth `h` on `grid`,
/// normalized to unit trapezoid mass.
fn evaluate_sorted(sorted: &[f64], h: f64, grid: &[f64]) -> Vec<f64> {
    let norm = INV_SQRT_2PI / (sorted.len() as f64 * h);
    let reach = KERNEL_CUTOFF * h;
    let mut values: Vec<f64> = grid
        .par_iter()
        .map(|&x| {
            let lo = sorted.partition_point(|&s| s < x - reach);
            let hi = sorted.partition_point(|&s| s <= x + reach);
            let sum: f64 = sorted[lo..hi]
                .iter()
                .map(|&s| {
                    let z = (x - s) / h;
                    (-0.5 * z * z).exp()
                })
                .sum();
            sum * norm
        })
        .collect();
    let mass = trapezoid(grid, &values);
    if mass > 0.0 {
        values.iter_mut().for_each(|v| *v /= mass);
    }
    values
}

/// Gaussian KDE with Silverman bandwidth on `grid_size` points spanning
/// `[min - 3h, max + 3h]`.
pub fn kde(samples: &[f64], grid_size: usize) -> Result<DensityEstimate> {
    if grid_size < 2 {
        return Err(H2sError::input("grid needs at least two points"));
    }
    let sorted = sorted_finite(samples)?;
    let h = bandwidth_sorted(&sorted)?;
    let grid = uniform_grid(sorted[0] - 3.0 * h, sorted[sorted.len() - 1] + 3.0 * h, grid_size);
    let values = evaluate_sorted(&sorted, h, &grid);
    Ok(DensityEstimate {
        grid,
        values,
        bandwidth: h,
    })
}

/// Gaussian KDE with Silverman bandwidth evaluated on a caller-supplied grid.
pub fn kde_on_grid(samples: &[f64], grid: &[f64]) -> Result<DensityEstimate> {
    let sorted = sorted_finite(samples)?;
    let h = bandwidth_sorted(&sorted)?;
    Ok(DensityEstimate {
        grid: grid.to_vec(),
        values: evaluate_sorted(&sorted, h, grid),
        bandwidth: h,
    })
}

/// Tabulates a known density on `grid`, renormalized to unit mass.
pub fn tabulate(grid: &[f64], f: impl Fn(f64) -> f64) -> DensityEstimate {
    let mut values: Vec<f64> = grid.iter().map(|&x| f(x).max(0.0)).collect();
    let mass = trapezoid(grid, &values);
    if mass > 0.0 {
        values.iter_mut().for_each(|v| *v /= mass);
    }
    let bandwidth = if grid.len() > 1 { grid[1] - grid[0] } else { 1.0 };
    DensityEstimate {
        grid: grid.to_vec(),
        values,
        bandwidth,
    }
}

/// Both densities on one grid. Identical grids are used as they are;
/// otherwise both are linearly interpolated onto a uniform grid over the
/// union of their spans and renormalized.
fn align(p: &DensityEstimate, q: &DensityEstimate) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    for d in [p, q] {
        if d.grid.len() < 2 || d.grid.len() != d.values.len() {
            return Err(H2sError::input("density must have matching grid and values of length >= 2"));
        }
    }
    if p.grid == q.grid {
        return Ok((p.grid.clone(), p.values.clone(), q.values.clone()));
    }
    let lo = p.grid[0].min(q.grid[0]);
    let hi = p.grid[p.grid.len() - 1].max(q.grid[q.grid.len() - 1]);
    let n = p.grid.len().max(q.grid.len());
    let grid = uniform_grid(lo, hi, n);
    let resample = |d: &DensityEstimate| {
        let mut v: Vec<f64> = grid.iter().map(|&x| d.at(x)).collect();
        let mass = trapezoid(&grid, &v);
        if mass > 0.0 {
            v.iter_mut().for_each(|x| *x /= mass);
        }
        v
    };
    let (pv, qv) = (resample(p), resample(q));
    Ok((grid, pv, qv))
}

/// `int |p - q|` on the shared grid.
pub fn l1_numerator(p: &DensityEstimate, q: &DensityEstimate) -> Result<f64> {
    let (grid, pv, qv) = align(p, q)?;
    let diff: Vec<f64> = pv.iter().zip(&qv).map(|(a, b)| (a - b).abs()).collect();
    Ok(trapezoid(&grid, &diff))
}

/// `int (p - q)^2` on the shared grid.
pub fn l2_numerator(p: &DensityEstimate, q: &DensityEstimate) -> Result<f64> {
    let (grid, pv, qv) = align(p, q)?;
    let diff: Vec<f64> = pv.iter().zip(&qv).map(|(a, b)| (a - b) * (a - b)).collect();
    Ok(trapezoid(&grid, &diff))
}

/// Relative L1 distance of `q` from the reference `p`.
pub fn relative_l1(p: &DensityEstimate, q: &DensityEstimate) -> Result<f64> {
    let (grid, pv, qv) = align(p, q)?;
    let diff: Vec<f64> = pv.iter().zip(&qv).map(|(a, b)| (a - b).abs()).collect();
    let abs_p: Vec<f64> = pv.iter().map(|a| a.abs()).collect();
    let denom = trapezoid(&grid, &abs_p);
    if !(denom > 0.0) {
        return Err(H2sError::input("reference density has zero mass"));
    }
    Ok(trapezoid(&grid, &diff) / denom)
}

/// Relative L2 distance of `q` from the reference `p`.
pub fn relative_l2(p: &DensityEstimate, q: &DensityEstimate) -> Result<f64> {
    let (grid, pv, qv) = align(p, q)?;
    let diff: Vec<f64> = pv.iter().zip(&qv).map(|(a, b)| (a - b) * (a - b)).collect();
    let sq: Vec<f64> = pv.iter().map(|a| a * a).collect();
    let denom = trapezoid(&grid, &sq);
    if !(denom > 0.0) {
        return Err(H2sError::input("reference density has zero mass"));
    }
    Ok((trapezoid(&grid, &diff) / denom).sqrt())
}

/// Two sample sets smoothed on a common grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleComparison {
    pub d1: f64,
    pub d2: f64,
    pub reference: DensityEstimate,
    pub alternative: DensityEstimate,
}

/// Smooths both sample sets (each with its own Silverman bandwidth) on one
/// grid spanning both supports plus three bandwidths, then measures d1, d2.
pub fn compare_samples(reference: &[f64], alternative: &[f64], grid_size: usize) -> Result<SampleComparison> {
    if grid_size < 2 {
        return Err(H2sError::input("grid needs at least two points"));
    }
    let a = sorted_finite(reference)?;
    let b = sorted_finite(alternative)?;
    let ha = bandwidth_sorted(&a)?;
    let hb = bandwidth_sorted(&b)?;
    let lo = (a[0] - 3.0 * ha).min(b[0] - 3.0 * hb);
    let hi = (a[a.len() - 1] + 3.0 * ha).max(b[b.len() - 1] + 3.0 * hb);
    let grid = uniform_grid(lo, hi, grid_size);
    let p = DensityEstimate {
        values: evaluate_sorted(&a, ha, &grid),
        grid: grid.clone(),
        bandwidth: ha,
    };
    let q = DensityEstimate {
        values: evaluate_sorted(&b, hb, &grid),
        grid,
        bandwidth: hb,
    };
    Ok(SampleComparison {
        d1: relative_l1(&p, &q)?,
        d2: relative_l2(&p, &q)?,
        reference: p,
        alternative: q,
    })
}
