//! Comparison of a two-stage chain against the full-Gibbs reference:
//! per-family density distances, timing, and convergence diagnostics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chain::{ChainStore, Family};
use crate::diagnostics::{effective_sample_size, split_rhat};
use crate::error::{H2sError, Result};
use crate::io;
use crate::metrics::{compare_samples, SampleComparison};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDistance {
    pub name: String,
    pub d1: f64,
    pub d2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyDistance {
    pub family: Family,
    pub parameters: usize,
    pub mean_d1: f64,
    pub mean_d2: f64,
    pub max_d1: f64,
    pub max_d2: f64,
    pub per_param: Vec<ParamDistance>,
}

/// Wall-clock comparison. The two-stage total counts one average stage-1
/// subset (subsets run concurrently) plus stage 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingTable {
    pub stage1_average_per_subset_seconds: f64,
    pub stage2_seconds: f64,
    pub two_stage_total_seconds: f64,
    pub full_total_seconds: f64,
    /// `1 - two_stage_total / full_total`
    pub reduction: f64,
    pub percent_reduction: f64,
}

impl TimingTable {
    pub fn new(stage1_average: f64, stage2: f64, full: f64) -> Self {
        let two = stage1_average + stage2;
        let reduction = if full > 0.0 { 1.0 - two / full } else { f64::NAN };
        TimingTable {
            stage1_average_per_subset_seconds: stage1_average,
            stage2_seconds: stage2,
            two_stage_total_seconds: two,
            full_total_seconds: full,
            reduction,
            percent_reduction: 100.0 * reduction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub rhat: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub grid_size: usize,
    pub families: Vec<FamilyDistance>,
    pub timing: Option<TimingTable>,
    pub reference_diagnostics: Vec<ParamDiagnostics>,
    pub alternative_diagnostics: Vec<ParamDiagnostics>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl ComparisonReport {
    pub fn family(&self, f: Family) -> Option<&FamilyDistance> {
        self.families.iter().find(|d| d.family == f)
    }

    pub fn max_rhat(&self) -> f64 {
        self.reference_diagnostics
            .iter()
            .chain(&self.alternative_diagnostics)
            .map(|d| d.rhat)
            .filter(|r| !r.is_nan())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Plain-text summary table.
    pub fn to_text(&self) -> String {
        let mut s = String::from("family   params   mean_d1   mean_d2    max_d1    max_d2\n");
        for f in &self.families {
            s.push_str(&format!(
                "{:<8} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>9.4}\n",
                f.family.as_str(),
                f.parameters,
                f.mean_d1,
                f.mean_d2,
                f.max_d1,
                f.max_d2
            ));
        }
        if let Some(t) = &self.timing {
            s.push_str(&format!(
                "\nstage 1 (avg per subset) {:.3}s\nstage 2                  {:.3}s\ntwo-stage total          {:.3}s\nfull Gibbs               {:.3}s\nreduction                {:.1}%\n",
                t.stage1_average_per_subset_seconds,
                t.stage2_seconds,
                t.two_stage_total_seconds,
                t.full_total_seconds,
                t.percent_reduction
            ));
        }
        s.push_str(&format!("\nmax split R-hat {:.4}\n", self.max_rhat()));
        s
    }
}

/// R-hat and ESS for every parameter; chains too short for a diagnostic
/// report NaN.
pub fn chain_diagnostics(store: &ChainStore) -> Vec<ParamDiagnostics> {
    store
        .iter()
        .map(|(name, x)| ParamDiagnostics {
            name: name.to_string(),
            rhat: split_rhat(x).unwrap_or(f64::NAN),
            ess: effective_sample_size(x).unwrap_or(f64::NAN),
        })
        .collect()
}

/// Compares every parameter of `reference` with the same-named parameter of
/// `alternative`. Returns the report and the per-parameter smoothed curves.
pub fn compare_chains(
    reference: &ChainStore,
    alternative: &ChainStore,
    grid_size: usize,
    timing: Option<TimingTable>,
) -> Result<(ComparisonReport, Vec<(String, SampleComparison)>)> {
    let missing: Vec<&str> = reference
        .names()
        .iter()
        .filter(|n| alternative.get(n).is_none())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(H2sError::input(format!(
            "chains do not have the same parameters; missing from the two-stage chain: {}",
            missing.join(", ")
        )));
    }
    let mut curves = Vec::with_capacity(reference.names().len());
    let mut families = Vec::new();
    for fam in Family::ALL {
        let params = reference.family(fam);
        if params.is_empty() {
            continue;
        }
        let mut per = Vec::with_capacity(params.len());
        for (name, x) in params {
            let y = alternative.get(name).unwrap_or_default();
            let c = compare_samples(x, y, grid_size)
                .map_err(|e| H2sError::input(format!("{name}: {e}")))?;
            per.push(ParamDistance {
                name: name.to_string(),
                d1: c.d1,
                d2: c.d2,
            });
            curves.push((name.to_string(), c));
        }
        let k = per.len() as f64;
        families.push(FamilyDistance {
            family: fam,
            parameters: per.len(),
            mean_d1: per.iter().map(|p| p.d1).sum::<f64>() / k,
            mean_d2: per.iter().map(|p| p.d2).sum::<f64>() / k,
            max_d1: per.iter().map(|p| p.d1).fold(0.0, f64::max),
            max_d2: per.iter().map(|p| p.d2).fold(0.0, f64::max),
            per_param: per,
        });
    }
    let report = ComparisonReport {
        grid_size,
        families,
        timing,
        reference_diagnostics: chain_diagnostics(reference),
        alternative_diagnostics: chain_diagnostics(alternative),
        meta: BTreeMap::new(),
    };
    Ok((report, curves))
}

/// One CSV per parameter with columns `x,reference,alternative`.
pub fn export_curves(dir: &Path, curves: &[(String, SampleComparison)]) -> Result<()> {
    io::create_dir_all(dir)?;
    for (name, c) in curves {
        let file: String = name
            .chars()
            .map(|ch| if ch.is_ascii_alphanumeric() { ch } else { '_' })
            .collect();
        let path = dir.join(format!("{}.csv", file.trim_end_matches('_')));
        io::write_atomic(&path, |w| {
            writeln!(w, "x,reference,alternative")?;
            for ((x, p), q) in c.reference.grid.iter().zip(&c.reference.values).zip(&c.alternative.values) {
                writeln!(w, "{x},{p},{q}")?;
            }
            Ok(())
        })?;
    }
    Ok(())
}
