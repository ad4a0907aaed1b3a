//! Longitudinal observations of treatment sequences.
//!
//! CSV layout: `unit_id,z1,...,zT,x1_1,...,x1_w,...,x{T-1}_w,y` with integer
//! treatment and covariate codes and a decimal outcome. Code 0 (or the zero
//! covariate vector) is the reference level.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::key::StratumKey;
use crate::table::{Cell, CovariateCodes, StratumTable, TableKind};

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub unit_id: String,
    pub treatments: Vec<u32>,
    pub covariates: Vec<Vec<u32>>,
    pub outcome: f64,
}

impl ObservationRecord {
    pub fn history(&self) -> StratumKey {
        StratumKey {
            treatments: self.treatments.clone(),
            covariates: self.covariates.clone(),
        }
    }
}

/// An immutable, validated dataset with its stratum index.
#[derive(Debug, Clone)]
pub struct Dataset {
    records: Vec<ObservationRecord>,
    horizon: usize,
    covariate_width: usize,
    treatment_levels: Vec<BTreeSet<u32>>,
    covariate_levels: Vec<BTreeSet<Vec<u32>>>,
    table: StratumTable,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
            && self.horizon == other.horizon
            && self.covariate_width == other.covariate_width
    }
}

impl Dataset {
    pub fn from_records(
        records: Vec<ObservationRecord>,
        horizon: usize,
        covariate_width: usize,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::usage("dataset has no records"));
        }
        if horizon == 0 {
            return Err(Error::usage("horizon must be at least 1"));
        }
        let mut treatment_levels = vec![BTreeSet::new(); horizon];
        let mut covariate_levels = vec![BTreeSet::new(); horizon - 1];
        for (i, r) in records.iter().enumerate() {
            if r.treatments.len() != horizon
                || r.covariates.len() != horizon - 1
                || r.covariates.iter().any(|x| x.len() != covariate_width)
            {
                return Err(Error::Domain {
                    line: i + 2,
                    message: format!("record {} does not match horizon {horizon}", r.unit_id),
                });
            }
            if !r.outcome.is_finite() {
                return Err(Error::Domain {
                    line: i + 2,
                    message: format!("record {} has a non-finite outcome", r.unit_id),
                });
            }
            for (t, &z) in r.treatments.iter().enumerate() {
                treatment_levels[t].insert(z);
            }
            for (t, x) in r.covariates.iter().enumerate() {
                covariate_levels[t].insert(x.clone());
            }
        }
        let codes = CovariateCodes::new(covariate_width, &covariate_levels);
        let cells = records
            .iter()
            .map(|r| Cell {
                path: codes.path_of(&r.history()).expect("all levels interned"),
                weight: 1.0,
                mean: r.outcome,
                ssd: 0.0,
            })
            .collect();
        let table = StratumTable::build(horizon, codes, TableKind::Empirical, cells)?;
        Ok(Self {
            records,
            horizon,
            covariate_width,
            treatment_levels,
            covariate_levels,
            table,
        })
    }

    pub fn records(&self) -> &[ObservationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn covariate_width(&self) -> usize {
        self.covariate_width
    }

    /// Observed treatment levels at time `t` (1-based).
    pub fn treatment_levels(&self, t: usize) -> &BTreeSet<u32> {
        &self.treatment_levels[t - 1]
    }

    /// Observed covariate vectors at period `t` (1-based).
    pub fn covariate_levels(&self, t: usize) -> &BTreeSet<Vec<u32>> {
        &self.covariate_levels[t - 1]
    }

    pub fn table(&self) -> &StratumTable {
        &self.table
    }

    /// Indices (file order) of the records in the stratum, ascending.
    pub fn stratum_members(&self, key: &StratumKey) -> Vec<usize> {
        let Some(id) = self.table.find(key) else {
            return Vec::new();
        };
        let mut out: Vec<usize> = self
            .table
            .node(id)
            .cells
            .clone()
            .map(|p| self.table.cell_origin(p))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header(self.horizon, self.covariate_width))
            .map_err(csv_io)?;
        for r in &self.records {
            let mut row = Vec::with_capacity(2 + self.horizon * (1 + self.covariate_width));
            row.push(r.unit_id.clone());
            row.extend(r.treatments.iter().map(u32::to_string));
            for x in &r.covariates {
                row.extend(x.iter().map(u32::to_string));
            }
            row.push(format_outcome(r.outcome));
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn format_outcome(y: f64) -> String {
    // shortest representation that parses back to the same f64
    format!("{y:?}")
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn header(horizon: usize, width: usize) -> Vec<String> {
    let mut h = vec!["unit_id".to_string()];
    h.extend((1..=horizon).map(|t| format!("z{t}")));
    for t in 1..horizon {
        h.extend((1..=width).map(|i| format!("x{t}_{i}")));
    }
    h.push("y".into());
    h
}

/// Parses a dataset from CSV bytes. Row order is preserved.
pub fn load_dataset<R: Read>(source: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut rows = rdr.records();
    let head = match rows.next() {
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(parse_err(1, "missing header row")),
    };
    let names: Vec<&str> = head.iter().collect();
    let (horizon, width) = infer_layout(&names)?;
    let expected = header(horizon, width);
    if names != expected {
        return Err(parse_err(
            1,
            format!("header must be `{}`", expected.join(",")),
        ));
    }

    let mut records = Vec::new();
    for (i, row) in rows.enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| parse_err(line, e.to_string()))?;
        if row.len() != expected.len() {
            return Err(parse_err(
                line,
                format!("expected {} columns, found {}", expected.len(), row.len()),
            ));
        }
        let code = |j: usize| -> Result<u32> {
            let s = &row[j];
            match s.parse::<i64>() {
                Ok(v) if v < 0 => Err(Error::Domain {
                    line,
                    message: format!("negative code {v} in column {}", expected[j]),
                }),
                Ok(v) => u32::try_from(v).map_err(|_| Error::Domain {
                    line,
                    message: format!("code {v} out of range in column {}", expected[j]),
                }),
                Err(_) => Err(parse_err(
                    line,
                    format!("non-integer code `{s}` in column {}", expected[j]),
                )),
            }
        };
        let treatments = (1..=horizon).map(code).collect::<Result<Vec<_>>>()?;
        let mut covariates = Vec::with_capacity(horizon.saturating_sub(1));
        for t in 0..horizon.saturating_sub(1) {
            let base = 1 + horizon + t * width;
            covariates.push((base..base + width).map(code).collect::<Result<Vec<_>>>()?);
        }
        let y_raw = &row[expected.len() - 1];
        let outcome: f64 = y_raw
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(line, format!("non-numeric outcome `{y_raw}`")))?;
        records.push(ObservationRecord {
            unit_id: row[0].to_string(),
            treatments,
            covariates,
            outcome,
        });
    }
    if records.is_empty() {
        return Err(parse_err(2, "no data rows"));
    }
    Dataset::from_records(records, horizon, width)
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn infer_layout(names: &[&str]) -> Result<(usize, usize)> {
    if names.len() < 3 || names[0] != "unit_id" || names[names.len() - 1] != "y" {
        return Err(parse_err(1, "header must start with unit_id and end with y"));
    }
    let horizon = names
        .iter()
        .filter(|n| {
            n.strip_prefix('z')
                .is_some_and(|r| !r.is_empty() && r.bytes().all(|b| b.is_ascii_digit()))
        })
        .count();
    if horizon == 0 {
        return Err(parse_err(1, "no treatment columns"));
    }
    let n_cov = names.len() - 2 - horizon;
    let width = if horizon == 1 {
        if n_cov != 0 {
            return Err(parse_err(1, "covariate columns present with a single treatment"));
        }
        0
    } else {
        if !n_cov.is_multiple_of(horizon - 1) {
            return Err(parse_err(
                1,
                format!("{n_cov} covariate columns do not divide into {} periods", horizon - 1),
            ));
        }
        n_cov / (horizon - 1)
    };
    Ok((horizon, width))
}
