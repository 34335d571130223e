//! Retained MCMC traces and their on-disk form.
//!
//! A [`ChainStore`] holds one trace per scalar parameter. Parameters are named
//! `mu`, `tau2`, `theta[g]`, `sigma2[g]`, `delta[g,c]` and `eta2[g,c]`, with
//! `g`/`c` the group and cell ids from the dataset. On disk a store is a
//! directory containing `meta.json` and one CSV per parameter family whose
//! header row holds the parameter names.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{H2sError, Result};
use crate::io;
use crate::model::{ChainState, Depth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Mu,
    Tau2,
    Theta,
    Sigma2,
    Delta,
    Eta2,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Mu,
        Family::Tau2,
        Family::Theta,
        Family::Sigma2,
        Family::Delta,
        Family::Eta2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Mu => "mu",
            Family::Tau2 => "tau2",
            Family::Theta => "theta",
            Family::Sigma2 => "sigma2",
            Family::Delta => "delta",
            Family::Eta2 => "eta2",
        }
    }

    pub fn of_param(name: &str) -> Option<Family> {
        let stem = name.split('[').next().unwrap_or(name);
        Family::ALL.into_iter().find(|f| f.as_str() == stem)
    }

    pub fn for_depth(depth: Depth) -> &'static [Family] {
        match depth {
            Depth::Three => &Family::ALL[..4],
            Depth::Four => &Family::ALL,
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Provenance of a chain. Everything needed to rerun it bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub sampler: String,
    pub depth: Depth,
    pub iterations: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub seed: u64,
    pub scan_order: String,
    pub initialization: String,
    pub tool_version: String,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainStore {
    pub meta: ChainMeta,
    names: Vec<String>,
    draws: Vec<Vec<f64>>,
}

/// Parameter names of `state` in storage order.
pub fn layout_names(state: &ChainState) -> Vec<String> {
    let mut names = vec!["mu".to_string(), "tau2".to_string()];
    names.extend(state.groups.iter().map(|g| format!("theta[{}]", g.group_id)));
    names.extend(state.groups.iter().map(|g| format!("sigma2[{}]", g.group_id)));
    for g in &state.groups {
        names.extend(g.cells.iter().map(|c| format!("delta[{},{}]", g.group_id, c.cell_id)));
    }
    for g in &state.groups {
        names.extend(g.cells.iter().map(|c| format!("eta2[{},{}]", g.group_id, c.cell_id)));
    }
    names
}

/// Number of draws kept from `iterations` after dropping `burn_in` and
/// keeping every `thin`-th of the rest.
pub fn retained_count(iterations: u64, burn_in: u64, thin: u64) -> u64 {
    (iterations - burn_in).div_ceil(thin)
}

fn is_retained(t: u64, burn_in: u64, thin: u64) -> bool {
    t >= burn_in && (t - burn_in) % thin == 0
}

/// Total iterations, discarded burn-in and thinning interval of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLength {
    pub iterations: u64,
    pub burn_in: u64,
    pub thin: u64,
}

impl RunLength {
    pub fn new(iterations: u64, burn_in: u64, thin: u64) -> Result<Self> {
        let r = RunLength {
            iterations,
            burn_in,
            thin,
        };
        r.validate()?;
        Ok(r)
    }

    /// Burn-in of 10% of `iterations`, no thinning.
    pub fn with_default_burn_in(iterations: u64) -> Result<Self> {
        Self::new(iterations, iterations / 10, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(H2sError::input(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(H2sError::input("thinning interval must be at least 1"));
        }
        Ok(())
    }

    pub fn retained(&self) -> u64 {
        retained_count(self.iterations, self.burn_in, self.thin)
    }

    pub fn keeps(&self, t: u64) -> bool {
        is_retained(t, self.burn_in, self.thin)
    }
}

impl ChainStore {
    pub fn new(meta: ChainMeta, names: Vec<String>) -> Self {
        let capacity = retained_count(meta.iterations, meta.burn_in, meta.thin.max(1)) as usize;
        let draws = names.iter().map(|_| Vec::with_capacity(capacity)).collect();
        ChainStore { meta, names, draws }
    }

    /// Builds a store from explicit traces, checking lengths and finiteness.
    pub fn from_traces(meta: ChainMeta, traces: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let (names, draws) = traces.into_iter().unzip();
        let store = ChainStore { meta, names, draws };
        store.validate()?;
        Ok(store)
    }

    pub fn for_state(meta: ChainMeta, state: &ChainState) -> Self {
        Self::new(meta, layout_names(state))
    }

    /// Appends one draw per parameter; `state` must have the layout the
    /// store was created with.
    pub fn push_state(&mut self, state: &ChainState) {
        let mut cols = self.draws.iter_mut();
        let mut put = |v: f64| cols.next().expect("state wider than layout").push(v);
        put(state.mu);
        put(state.tau2);
        state.groups.iter().for_each(|g| put(g.theta));
        state.groups.iter().for_each(|g| put(g.sigma2));
        for g in &state.groups {
            g.cells.iter().for_each(|c| put(c.delta));
        }
        for g in &state.groups {
            g.cells.iter().for_each(|c| put(c.eta2));
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.draws[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.draws.iter().map(Vec::as_slice))
    }

    pub fn family(&self, family: Family) -> Vec<(&str, &[f64])> {
        self.iter()
            .filter(|(n, _)| Family::of_param(n) == Some(family))
            .collect()
    }

    /// Retained draws per parameter.
    pub fn len(&self) -> usize {
        self.draws.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for (name, d) in self.iter() {
            if d.len() != n {
                return Err(H2sError::input(format!(
                    "trace {name} has {} draws, expected {n}",
                    d.len()
                )));
            }
            if let Some(pos) = d.iter().position(|v| !v.is_finite()) {
                return Err(H2sError::Numerical(format!(
                    "trace {name} has non-finite draw {} at position {pos}",
                    d[pos]
                )));
            }
            if Family::of_param(name).is_none() {
                return Err(H2sError::input(format!("unknown parameter name {name}")));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        io::create_dir_all(dir)?;
        io::write_json(&dir.join("meta.json"), &self.meta)?;
        for family in Family::ALL {
            let cols = self.family(family);
            if cols.is_empty() {
                continue;
            }
            let path = dir.join(format!("{family}.csv"));
            io::write_atomic(&path, |w| {
                let mut out = csv::Writer::from_writer(w);
                out.write_record(cols.iter().map(|(n, _)| *n))?;
                let mut row = Vec::with_capacity(cols.len());
                for i in 0..self.len() {
                    row.clear();
                    row.extend(cols.iter().map(|(_, d)| d[i].to_string()));
                    out.write_record(&row)?;
                }
                out.flush()
            })?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: ChainMeta = io::read_json(&dir.join("meta.json"))?;
        let mut names = Vec::new();
        let mut draws: Vec<Vec<f64>> = Vec::new();
        for family in Family::ALL {
            let path = dir.join(format!("{family}.csv"));
            if !path.exists() {
                continue;
            }
            let mut rdr = csv::Reader::from_reader(io::open_read(&path)?);
            let header = rdr
                .headers()
                .map_err(|e| H2sError::input(format!("{}: {e}", path.display())))?
                .clone();
            let first = draws.len();
            for h in header.iter() {
                if Family::of_param(h) != Some(family) {
                    return Err(H2sError::input(format!(
                        "{}: column {h} does not belong to family {family}",
                        path.display()
                    )));
                }
                names.push(h.to_string());
                draws.push(Vec::new());
            }
            for rec in rdr.records() {
                let rec = rec.map_err(|e| H2sError::input(format!("{}: {e}", path.display())))?;
                let line = rec.position().map_or(0, |p| p.line());
                for (k, field) in rec.iter().enumerate() {
                    let v: f64 = field.trim().parse().map_err(|_| H2sError::Parse {
                        path: path.clone(),
                        line,
                        message: format!("not a number: {field:?}"),
                    })?;
                    draws[first + k].push(v);
                }
            }
        }
        if names.is_empty() {
            return Err(H2sError::input(format!(
                "{} holds no chain CSV files",
                dir.display()
            )));
        }
        let store = ChainStore { meta, names, draws };
        store.validate()?;
        Ok(store)
    }
}
