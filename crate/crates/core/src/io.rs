//! CSV ingestion and export.
//!
//! Layout: the header row holds a corner label followed by series ids; every
//! other row holds a timestamp label followed by one cell per series. Empty
//! cells are missing observations.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestOptions {
    /// Replace prices by `log v_t - log v_{t-1}`.
    pub log_returns: bool,
    /// Center and scale every series to mean 0, standard deviation 1 over its
    /// observed cells.
    pub standardize: bool,
    /// Rows of the file are series rather than time steps.
    pub transpose: bool,
}

struct RawTable {
    columns: Vec<String>,
    rows: Vec<String>,
    /// `None` marks an empty cell.
    cells: Vec<Vec<Option<f64>>>,
}

fn read_table<R: Read>(reader: R) -> Result<RawTable> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let header = csv.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::Parse("header needs a corner label and at least one series id".into()));
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for (r, record) in csv.records().enumerate() {
        let record = record?;
        rows.push(record[0].to_string());
        let parsed = record
            .iter()
            .skip(1)
            .enumerate()
            .map(|(c, cell)| {
                let cell = cell.trim();
                if cell.is_empty() {
                    return Ok(None);
                }
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(Some(v)),
                    _ => Err(Error::Parse(format!("row {} column '{}': '{cell}' is not a finite number", r + 1, columns[c]))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        cells.push(parsed);
    }
    if rows.is_empty() {
        return Err(Error::Parse("no data rows".into()));
    }
    Ok(RawTable { columns, rows, cells })
}

/// Read a dataset from CSV text, applying the requested preprocessing in the
/// order transpose, log-returns, standardize.
pub fn ingest_reader<R: Read>(reader: R, options: &IngestOptions) -> Result<Dataset> {
    let table = read_table(reader)?;
    let (mut labels, ids, mut grid) = if options.transpose {
        let grid: Vec<Vec<Option<f64>>> =
            (0..table.columns.len()).map(|c| table.cells.iter().map(|row| row[c]).collect()).collect();
        (table.columns, table.rows, grid)
    } else {
        (table.rows, table.columns, table.cells)
    };

    if options.log_returns {
        if grid.len() < 2 {
            return Err(Error::Validation("log returns need at least two rows".into()));
        }
        for (r, row) in grid.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if matches!(v, Some(x) if *x <= 0.0) {
                    return Err(Error::Validation(format!("series '{}' has a non-positive price at row {}", ids[c], r + 1)));
                }
            }
        }
        grid = grid
            .windows(2)
            .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| Some(b.as_ref()?.ln() - a.as_ref()?.ln())).collect())
            .collect();
        labels.remove(0);
    }

    let t = grid.len();
    let n = ids.len();
    let mut values = DMatrix::from_fn(t, n, |r, c| grid[r][c].unwrap_or(f64::NAN));
    let mask = DMatrix::from_fn(t, n, |r, c| grid[r][c].is_some());

    if options.standardize {
        for c in 0..n {
            let observed: Vec<f64> = (0..t).filter(|&r| mask[(r, c)]).map(|r| values[(r, c)]).collect();
            let count = observed.len() as f64;
            let mean = observed.iter().sum::<f64>() / count;
            let sd = (observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count).sqrt();
            if !(sd > 0.0) {
                return Err(Error::Validation(format!("series '{}' has zero variance", ids[c])));
            }
            for r in 0..t {
                if mask[(r, c)] {
                    values[(r, c)] = (values[(r, c)] - mean) / sd;
                }
            }
        }
    }
    Dataset::new(values, mask, ids, Some(labels))
}

pub fn ingest(path: &Path, options: &IngestOptions) -> Result<Dataset> {
    ingest_reader(File::open(path)?, options)
}

/// Write a dataset in the ingestion layout; missing cells are left empty and
/// values use the shortest representation that parses back exactly.
pub fn write_dataset<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend(dataset.series_ids().iter().cloned());
    csv.write_record(&header)?;
    for r in 0..dataset.n_times() {
        let label = dataset.timestamps().map(|ts| ts[r].clone()).unwrap_or_else(|| r.to_string());
        let mut record = vec![label];
        record.extend((0..dataset.n_series()).map(|i| dataset.get(r, i).map(|v| v.to_string()).unwrap_or_default()));
        csv.write_record(&record)?;
    }
    csv.flush()?;
    Ok(())
}

/// `series_id,label` rows with one-based labels.
pub fn write_labels<W: Write>(ids: &[String], labels: &[usize], writer: W) -> Result<()> {
    if ids.len() != labels.len() {
        return Err(Error::Dimension(format!("{} ids for {} labels", ids.len(), labels.len())));
    }
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["series_id", "label"])?;
    for (id, l) in ids.iter().zip(labels) {
        csv.write_record([id.as_str(), &(l + 1).to_string()])?;
    }
    csv.flush()?;
    Ok(())
}

/// Inverse of [`write_labels`]: zero-based labels in file order.
pub fn read_labels<R: Read>(reader: R) -> Result<(Vec<String>, Vec<usize>)> {
    let mut csv = csv::Reader::from_reader(reader);
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for record in csv.records() {
        let record = record?;
        if record.len() != 2 {
            return Err(Error::Parse("label rows need exactly two fields".into()));
        }
        let label: usize = record[1].trim().parse().map_err(|_| Error::Parse(format!("bad label '{}'", &record[1])))?;
        if label == 0 {
            return Err(Error::Parse("labels are one-based".into()));
        }
        ids.push(record[0].to_string());
        labels.push(label - 1);
    }
    Ok((ids, labels))
}

/// `sweep,elbo` rows, sweeps counted from 1.
pub fn write_elbo_trace<W: Write>(trace: &[f64], writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["sweep", "elbo"])?;
    for (s, v) in trace.iter().enumerate() {
        csv.write_record([(s + 1).to_string(), v.to_string()])?;
    }
    csv.flush()?;
    Ok(())
}
