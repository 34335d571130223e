//! Grouped datasets and their CSV form.
//!
//! A depth-3 file has the header `group_id,value`; a depth-4 file has
//! `group_id,cell_id,value`. Rows may come in any order. Values are taken as
//! they are: any transformation (such as a log of delay times) is up to
//! whoever produced the file.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{H2sError, Result};
use crate::io;
use crate::model::{compute_stats, Cell, Depth, GroupData, GroupStats, GroupValues};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub depth: Depth,
    /// Sorted by ascending group id.
    pub groups: Vec<GroupData>,
}

impl Dataset {
    /// Sorts groups (and cells) by id and checks the dataset is well formed.
    pub fn new(depth: Depth, mut groups: Vec<GroupData>) -> Result<Self> {
        groups.sort_by_key(|g| g.group_id);
        for g in &mut groups {
            if let GroupValues::Cells(cells) = &mut g.values {
                cells.sort_by_key(|c| c.cell_id);
            }
        }
        let ds = Dataset { depth, groups };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(H2sError::input("dataset has no groups"));
        }
        for pair in self.groups.windows(2) {
            if pair[0].group_id == pair[1].group_id {
                return Err(H2sError::input(format!(
                    "duplicate group id {}",
                    pair[0].group_id
                )));
            }
        }
        for g in &self.groups {
            if g.depth() != self.depth {
                return Err(H2sError::input(format!(
                    "group {} has depth-{} layout in a depth-{} dataset",
                    g.group_id,
                    g.depth(),
                    self.depth
                )));
            }
            if let GroupValues::Cells(cells) = &g.values {
                for pair in cells.windows(2) {
                    if pair[0].cell_id == pair[1].cell_id {
                        return Err(H2sError::input(format!(
                            "group {} repeats cell id {}",
                            g.group_id, pair[0].cell_id
                        )));
                    }
                }
            }
            compute_stats(g)?;
        }
        Ok(())
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn stats(&self) -> Result<Vec<GroupStats>> {
        self.groups.iter().map(compute_stats).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, |w| {
            match self.depth {
                Depth::Three => writeln!(w, "group_id,value")?,
                Depth::Four => writeln!(w, "group_id,cell_id,value")?,
            }
            for g in &self.groups {
                match &g.values {
                    GroupValues::Flat(values) => {
                        for v in values {
                            writeln!(w, "{},{}", g.group_id, v)?;
                        }
                    }
                    GroupValues::Cells(cells) => {
                        for c in cells {
                            for v in &c.values {
                                writeln!(w, "{},{},{}", g.group_id, c.cell_id, v)?;
                            }
                        }
                    }
                }
            }
            Ok(())
        })
    }

    /// Reads a dataset CSV. The depth is taken from the header; pass
    /// `expected` to insist on one.
    pub fn read_csv(path: &Path, expected: Option<Depth>) -> Result<Self> {
        let file = io::open_read(path)?;
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(file);
        let parse_err = |line: u64, message: String| H2sError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let header = rdr
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .clone();
        let cols: Vec<&str> = header.iter().collect();
        let depth = match cols.as_slice() {
            ["group_id", "value"] => Depth::Three,
            ["group_id", "cell_id", "value"] => Depth::Four,
            _ => {
                return Err(parse_err(
                    1,
                    format!(
                        "expected header `group_id,value` or `group_id,cell_id,value`, found `{}`",
                        cols.join(",")
                    ),
                ))
            }
        };
        if let Some(want) = expected {
            if want != depth {
                return Err(parse_err(
                    1,
                    format!("header describes a depth-{depth} dataset, expected depth {want}"),
                ));
            }
        }

        let mut flat: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        let mut nested: BTreeMap<u64, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let id = |k: usize, what: &str| -> Result<u64> {
                rec[k]
                    .parse::<u64>()
                    .map_err(|_| parse_err(line, format!("{what} {:?} is not a non-negative integer", &rec[k])))
            };
            let value_at = |k: usize| -> Result<f64> {
                let v: f64 = rec[k]
                    .parse()
                    .map_err(|_| parse_err(line, format!("value {:?} is not a number", &rec[k])))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(line, format!("value {v} is not finite")))
                }
            };
            match depth {
                Depth::Three => {
                    let g = id(0, "group_id")?;
                    flat.entry(g).or_default().push(value_at(1)?);
                }
                Depth::Four => {
                    let g = id(0, "group_id")?;
                    let c = id(1, "cell_id")?;
                    nested
                        .entry(g)
                        .or_default()
                        .entry(c)
                        .or_default()
                        .push(value_at(2)?);
                }
            }
        }

        let groups: Vec<GroupData> = match depth {
            Depth::Three => flat
                .into_iter()
                .map(|(group_id, values)| GroupData {
                    group_id,
                    values: GroupValues::Flat(values),
                })
                .collect(),
            Depth::Four => nested
                .into_iter()
                .map(|(group_id, cells)| GroupData {
                    group_id,
                    values: GroupValues::Cells(
                        cells
                            .into_iter()
                            .map(|(cell_id, values)| Cell { cell_id, values })
                            .collect(),
                    ),
                })
                .collect(),
        };
        if groups.is_empty() {
            return Err(parse_err(1, "file holds a header but no data rows".into()));
        }
        Dataset::new(depth, groups)
    }
}
