//! Stage-1 sample banks and the `H2SBANK1` file format.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size     | field                                           |
//! |--------|----------|-------------------------------------------------|
//! | 0      | 8        | magic `H2SBANK1`                                |
//! | 8      | 4        | format version, `u32`                           |
//! | 12     | 8        | group id, `u64`                                 |
//! | 20     | 8        | column count, `u64`                             |
//! | 28     | 8        | row count A, `u64`                              |
//! | 36     | variable | column names: per column `u64` length + UTF-8   |
//! |        | variable | metadata JSON: `u64` length + UTF-8             |
//! |        | 8·cols·A | draws, row-major IEEE-754 `f64`                 |
//!
//! Nothing may follow the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{H2sError, Result};
use crate::io;
use crate::model::{CellState, Depth, GroupState, InvGammaPrior, NormalPrior};

pub const MAGIC: &[u8; 8] = b"H2SBANK1";
pub const FORMAT_VERSION: u32 = 1;

const MAX_COLUMNS: u64 = 1 << 20;
const MAX_NAME_LEN: u64 = 1 << 16;
const MAX_META_LEN: u64 = 1 << 26;

/// How a bank was produced. Stage 2 needs the stage-1 theta prior for the
/// exact acceptance ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankMeta {
    pub depth: Depth,
    pub stage1_theta_prior: NormalPrior,
    pub prior_sigma2: InvGammaPrior,
    pub prior_eta2: Option<InvGammaPrior>,
    pub seed: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub n_observations: u64,
    pub tool_version: String,
}

/// The retained stage-1 draws of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBank {
    pub group_id: u64,
    pub meta: BankMeta,
    columns: Vec<String>,
    cell_ids: Vec<u64>,
    /// Row-major, `rows * columns.len()` values.
    draws: Vec<f64>,
}

/// Column names for a group with the given cells (empty at depth 3).
pub fn bank_columns(cell_ids: &[u64]) -> Vec<String> {
    let mut cols = vec!["theta".to_string(), "sigma2".to_string()];
    for c in cell_ids {
        cols.push(format!("delta[{c}]"));
        cols.push(format!("eta2[{c}]"));
    }
    cols
}

fn parse_cell_ids(columns: &[String]) -> Result<Vec<u64>> {
    if columns.len() < 2 || columns[0] != "theta" || columns[1] != "sigma2" {
        return Err(H2sError::input(format!(
            "bank columns must start with theta, sigma2; found {columns:?}"
        )));
    }
    if columns.len() % 2 != 0 {
        return Err(H2sError::input("bank has an unpaired delta/eta2 column"));
    }
    let mut ids = Vec::new();
    for pair in columns[2..].chunks(2) {
        let id = |name: &str, prefix: &str| -> Option<u64> {
            name.strip_prefix(prefix)?.strip_suffix(']')?.parse().ok()
        };
        match (id(&pair[0], "delta["), id(&pair[1], "eta2[")) {
            (Some(a), Some(b)) if a == b => ids.push(a),
            _ => {
                return Err(H2sError::input(format!(
                    "malformed cell columns {:?}, {:?}",
                    pair[0], pair[1]
                )))
            }
        }
    }
    Ok(ids)
}

impl SampleBank {
    pub fn new(group_id: u64, meta: BankMeta, columns: Vec<String>, draws: Vec<f64>) -> Result<Self> {
        let cell_ids = parse_cell_ids(&columns)?;
        let bank = SampleBank {
            group_id,
            meta,
            columns,
            cell_ids,
            draws,
        };
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = match self.meta.depth {
            Depth::Three => self.cell_ids.is_empty(),
            Depth::Four => !self.cell_ids.is_empty(),
        };
        if !expected {
            return Err(H2sError::input(format!(
                "bank for group {} has {} cell column pairs, inconsistent with depth {}",
                self.group_id,
                self.cell_ids.len(),
                self.meta.depth
            )));
        }
        let width = self.columns.len();
        if self.draws.is_empty() || self.draws.len() % width != 0 {
            return Err(H2sError::input(format!(
                "bank for group {} must hold a positive whole number of rows",
                self.group_id
            )));
        }
        for (k, v) in self.draws.iter().enumerate() {
            let col = k % width;
            let variance_col = col == 1 || (col >= 2 && col % 2 == 1);
            if !v.is_finite() || (variance_col && *v <= 0.0) {
                return Err(H2sError::input(format!(
                    "bank for group {}: invalid {} = {v} in row {}",
                    self.group_id,
                    self.columns[col],
                    k / width
                )));
            }
        }
        Ok(())
    }

    /// A, the number of retained draws.
    pub fn rows(&self) -> usize {
        self.draws.len() / self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn cell_ids(&self) -> &[u64] {
        &self.cell_ids
    }

    pub fn depth(&self) -> Depth {
        self.meta.depth
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.columns.len();
        &self.draws[i * w..(i + 1) * w]
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.draws.iter().skip(k).step_by(self.columns.len()).copied().collect())
    }

    pub fn theta(&self, i: usize) -> f64 {
        self.row(i)[0]
    }

    /// Row `i` as a group block.
    pub fn block(&self, i: usize) -> GroupState {
        let r = self.row(i);
        GroupState {
            group_id: self.group_id,
            theta: r[0],
            sigma2: r[1],
            cells: self
                .cell_ids
                .iter()
                .enumerate()
                .map(|(j, &cell_id)| CellState {
                    cell_id,
                    delta: r[2 + 2 * j],
                    eta2: r[3 + 2 * j],
                })
                .collect(),
        }
    }

    /// Writes row `i` into an existing block of the same layout.
    pub fn load_row_into(&self, i: usize, block: &mut GroupState) {
        let r = self.row(i);
        block.theta = r[0];
        block.sigma2 = r[1];
        for (j, cell) in block.cells.iter_mut().enumerate() {
            cell.delta = r[2 + 2 * j];
            cell.eta2 = r[3 + 2 * j];
        }
    }

    /// Raw row-major draws.
    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    /// Mutable access for tests that perturb stored draws.
    #[doc(hidden)]
    pub fn draws_mut(&mut self) -> &mut [f64] {
        &mut self.draws
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)
            .map_err(|e| H2sError::input(format!("serializing bank metadata: {e}")))?;
        let mut out = Vec::with_capacity(64 + meta.len() + self.draws.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.group_id.to_le_bytes());
        out.extend_from_slice(&(self.columns.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        for c in &self.columns {
            out.extend_from_slice(&(c.len() as u64).to_le_bytes());
            out.extend_from_slice(c.as_bytes());
        }
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for v in &self.draws {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(8, "magic")?;
        if magic != MAGIC {
            return Err(H2sError::format(0, format!("bad magic {magic:?}")));
        }
        let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(H2sError::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let group_id = cur.u64("group id")?;
        let ncols_at = cur.pos;
        let ncols = cur.u64("column count")?;
        if ncols == 0 || ncols > MAX_COLUMNS {
            return Err(H2sError::format(ncols_at as u64, format!("implausible column count {ncols}")));
        }
        let rows_at = cur.pos;
        let rows = cur.u64("row count")?;
        if rows == 0 {
            return Err(H2sError::format(rows_at as u64, "bank has no rows"));
        }
        let mut columns = Vec::with_capacity(ncols as usize);
        for _ in 0..ncols {
            columns.push(cur.string(MAX_NAME_LEN, "column name")?);
        }
        let meta_at = cur.pos;
        let meta_text = cur.string(MAX_META_LEN, "metadata")?;
        let meta: BankMeta = serde_json::from_str(&meta_text)
            .map_err(|e| H2sError::format(meta_at as u64, format!("metadata JSON: {e}")))?;

        let payload_at = cur.pos;
        let n = ncols
            .checked_mul(rows)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| H2sError::format(rows_at as u64, "payload size overflows"))?;
        let remaining = (bytes.len() - payload_at) as u64;
        if remaining < n {
            return Err(H2sError::format(
                bytes.len() as u64,
                format!("truncated payload: expected {n} bytes from offset {payload_at}, found {remaining}"),
            ));
        }
        if remaining > n {
            return Err(H2sError::format(
                payload_at as u64 + n,
                format!("{} unexpected trailing bytes", remaining - n),
            ));
        }
        let mut draws = Vec::with_capacity((n / 8) as usize);
        for (k, chunk) in bytes[payload_at..].chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(H2sError::format(
                    (payload_at + 8 * k) as u64,
                    format!("non-finite value {v} in payload"),
                ));
            }
            draws.push(v);
        }
        SampleBank::new(group_id, meta, columns, draws).map_err(|e| match e {
            H2sError::Input(m) => H2sError::format(payload_at as u64, m),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        io::write_atomic(path, |w| w.write_all(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::io::Read::read_to_end(&mut io::open_read(path)?, &mut bytes)
            .map_err(|e| H2sError::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            H2sError::Format { offset, message } => H2sError::format(
                offset,
                format!("{}: {message}", path.display()),
            ),
            other => other,
        })
    }

    /// Writes the draws as CSV with a header of column names.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(&self.columns)?;
            for i in 0..self.rows() {
                out.write_record(self.row(i).iter().map(|v| v.to_string()))?;
            }
            out.flush()
        })
    }
}

pub fn save_bank(bank: &SampleBank, path: &Path) -> Result<()> {
    bank.save(path)
}

pub fn load_bank(path: &Path) -> Result<SampleBank> {
    SampleBank::load(path)
}

/// File name used for a group's bank inside a bank directory.
pub fn bank_file_name(group_id: u64) -> String {
    format!("group_{group_id}.h2sbank")
}

/// Loads every `*.h2sbank` file in `dir`, ordered by group id.
pub fn load_bank_dir(dir: &Path) -> Result<Vec<SampleBank>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| H2sError::io(format!("listing {}", dir.display()), e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| H2sError::io(format!("listing {}", dir.display()), e))?;
        let p = entry.path();
        if p.extension().is_some_and(|e| e == "h2sbank") {
            paths.push(p);
        }
    }
    if paths.is_empty() {
        return Err(H2sError::input(format!("no bank files in {}", dir.display())));
    }
    let mut banks = paths
        .iter()
        .map(|p| SampleBank::load(p))
        .collect::<Result<Vec<_>>>()?;
    banks.sort_by_key(|b| b.group_id);
    Ok(banks)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(H2sError::format(
                self.pos as u64,
                format!("file truncated while reading {what}"),
            )),
        }
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, max: u64, what: &str) -> Result<String> {
        let at = self.pos as u64;
        let len = self.u64(what)?;
        if len > max {
            return Err(H2sError::format(at, format!("{what} length {len} exceeds {max}")));
        }
        let raw = self.take(len as usize, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| H2sError::format(at + 8, format!("{what} is not UTF-8")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(depth: Depth) -> BankMeta {
        BankMeta {
            depth,
            stage1_theta_prior: NormalPrior {
                mean: 0.0,
                variance: 1e6,
            },
            prior_sigma2: InvGammaPrior {
                shape: 0.01,
                rate: 0.01,
            },
            prior_eta2: None,
            seed: 7,
            burn_in: 10,
            thin: 1,
            n_observations: 5,
            tool_version: "test".into(),
        }
    }

    fn bank() -> SampleBank {
        let draws = vec![1.0, 2.0, 1.5, 0.25, -3.0, 1e-300];
        SampleBank::new(11, meta(Depth::Three), bank_columns(&[]), draws).unwrap()
    }

    #[test]
    fn roundtrip_bytes_and_file() {
        let b = bank();
        assert_eq!(SampleBank::from_bytes(&b.to_bytes().unwrap()).unwrap(), b);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(bank_file_name(11));
        b.save(&p).unwrap();
        assert_eq!(load_bank(&p).unwrap(), b);
        assert_eq!(load_bank_dir(dir.path()).unwrap(), vec![b]);
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = bank().to_bytes().unwrap();
        assert_eq!(&bytes[..8], b"H2SBANK1");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &11u64.to_le_bytes());
        assert_eq!(&bytes[20..28], &2u64.to_le_bytes());
        assert_eq!(&bytes[28..36], &3u64.to_le_bytes());
        assert_eq!(&bytes[36..44], &5u64.to_le_bytes());
        assert_eq!(&bytes[44..49], b"theta");
        let tail = &bytes[bytes.len() - 8..];
        assert_eq!(tail, &1e-300f64.to_le_bytes());
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = bank().to_bytes().unwrap();
        for cut in [3, 10, 30, 40, bytes.len() - 60, bytes.len() - 1] {
            let err = SampleBank::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, H2sError::Format { .. }), "cut {cut}: {err}");
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(
            SampleBank::from_bytes(&longer).unwrap_err(),
            H2sError::Format { .. }
        ));
    }

    #[test]
    fn version_bump_is_rejected() {
        let mut bytes = bank().to_bytes().unwrap();
        bytes[8] = 2;
        assert!(matches!(
            SampleBank::from_bytes(&bytes).unwrap_err(),
            H2sError::UnsupportedVersion { found: 2, supported: 1 }
        ));
        let mut bytes = bank().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            SampleBank::from_bytes(&bytes).unwrap_err(),
            H2sError::Format { offset: 0, .. }
        ));
    }

    #[test]
    fn nan_in_payload_names_offset() {
        let mut bytes = bank().to_bytes().unwrap();
        let at = bytes.len() - 16;
        bytes[at..at + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        match SampleBank::from_bytes(&bytes).unwrap_err() {
            H2sError::Format { offset, .. } => assert_eq!(offset as usize, at),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn invalid_banks_rejected() {
        assert!(SampleBank::new(1, meta(Depth::Three), bank_columns(&[]), vec![]).is_err());
        assert!(SampleBank::new(1, meta(Depth::Three), bank_columns(&[]), vec![1.0, -1.0]).is_err());
        assert!(SampleBank::new(1, meta(Depth::Four), bank_columns(&[]), vec![1.0, 1.0]).is_err());
        assert!(SampleBank::new(1, meta(Depth::Three), bank_columns(&[3]), vec![1.0; 4]).is_err());
        let b = SampleBank::new(1, meta(Depth::Four), bank_columns(&[3, 5]), vec![1.0; 12]).unwrap();
        assert_eq!(b.cell_ids(), &[3, 5]);
        assert_eq!(b.rows(), 2);
        assert_eq!(b.block(1).cells[1].cell_id, 5);
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            rows in 1usize..40,
            cells in 0usize..4,
            seed in any::<u64>(),
            group_id in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = crate::rng::StreamRng::seed_from_u64(seed);
            let ids: Vec<u64> = (0..cells as u64).map(|c| c * 3 + 1).collect();
            let cols = bank_columns(&ids);
            let draws: Vec<f64> = (0..rows * cols.len())
                .map(|k| {
                    let c = k % cols.len();
                    let x: f64 = rng.random::<f64>() * 10f64.powi(rng.random_range(-30..30));
                    if c == 0 || (c >= 2 && c % 2 == 0) { x - 0.5 } else { x + f64::MIN_POSITIVE }
                })
                .collect();
            let depth = if cells == 0 { Depth::Three } else { Depth::Four };
            let b = SampleBank::new(group_id, meta(depth), cols, draws).unwrap();
            let back = SampleBank::from_bytes(&b.to_bytes().unwrap()).unwrap();
            prop_assert!(back.draws().iter().zip(b.draws()).all(|(x, y)| x.to_bits() == y.to_bits()));
            prop_assert_eq!(back, b);
        }
    }
}
