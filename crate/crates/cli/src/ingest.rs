//! CSV ingestion and covariate expansion.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use balquant::{Dataset, Matrix};
use serde::Serialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub response: String,
    /// Cell text marking a missing response, in addition to an empty cell.
    pub missing_token: String,
    /// Splits rows into per-group datasets.
    pub group_column: Option<String>,
    /// Columns ignored entirely.
    pub exclude: Vec<String>,
    pub expand_interactions: bool,
}

impl IngestOptions {
    pub fn new(response: impl Into<String>) -> Self {
        Self {
            response: response.into(),
            missing_token: String::new(),
            group_column: None,
            exclude: Vec::new(),
            expand_interactions: false,
        }
    }
}

/// Parsed CSV before any transformation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub covariates: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Option<f64>>,
    pub group: Option<Vec<String>>,
}

/// One analysis dataset with centered covariates.
#[derive(Debug, Clone)]
pub struct GroupData {
    pub label: Option<String>,
    pub covariates: Vec<String>,
    pub data: Dataset,
    /// Covariates that are constant within the group.
    pub constant_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub label: Option<String>,
    pub n: usize,
    pub n_observed: usize,
    pub p: usize,
    pub covariates: Vec<String>,
    pub centers: Vec<f64>,
    pub constant_columns: Vec<String>,
}

impl GroupData {
    pub fn summary(&self) -> GroupSummary {
        GroupSummary {
            label: self.label.clone(),
            n: self.data.n(),
            n_observed: self.data.n_observed(),
            p: self.data.p(),
            covariates: self.covariates.clone(),
            centers: self.data.column_centers().to_vec(),
            constant_columns: self.constant_columns.clone(),
        }
    }
}

fn parse_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn read_table<R: Read>(reader: R, opts: &IngestOptions) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let resp = find(&opts.response)
        .ok_or_else(|| CliError::Input(format!("response column '{}' not found", opts.response)))?;
    let group = match &opts.group_column {
        Some(g) => Some(find(g).ok_or_else(|| CliError::Input(format!("group column '{g}' not found")))?),
        None => None,
    };
    for e in &opts.exclude {
        if find(e).is_none() {
            return Err(CliError::Input(format!("excluded column '{e}' not found")));
        }
    }
    let cov_idx: Vec<usize> = (0..headers.len())
        .filter(|&j| j != resp && Some(j) != group && !opts.exclude.contains(&headers[j]))
        .collect();
    if cov_idx.is_empty() {
        return Err(CliError::Input("no covariate columns".into()));
    }

    let mut table = RawTable {
        covariates: cov_idx.iter().map(|&j| headers[j].clone()).collect(),
        x: Vec::new(),
        y: Vec::new(),
        group: group.map(|_| Vec::new()),
    };
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let cell_err = |j: usize, message: String| CliError::Cell {
            row: line,
            column: headers[j].clone(),
            message,
        };
        let mut row = Vec::with_capacity(cov_idx.len());
        for &j in &cov_idx {
            let s = rec.get(j).unwrap_or("");
            if s.is_empty() || s == opts.missing_token {
                return Err(cell_err(j, "missing covariate value".into()));
            }
            row.push(parse_number(s).ok_or_else(|| cell_err(j, format!("not a finite number: '{s}'")))?);
        }
        let s = rec.get(resp).unwrap_or("");
        let y = if s.is_empty() || s == opts.missing_token {
            None
        } else {
            Some(parse_number(s).ok_or_else(|| cell_err(resp, format!("not a finite number: '{s}'")))?)
        };
        if let (Some(g), Some(labels)) = (group, table.group.as_mut()) {
            let s = rec.get(g).unwrap_or("");
            if s.is_empty() {
                return Err(cell_err(g, "missing group label".into()));
            }
            labels.push(s.to_string());
        }
        table.x.push(row);
        table.y.push(y);
    }
    if table.x.is_empty() {
        return Err(CliError::Input("no data rows".into()));
    }
    Ok(table)
}

/// Original columns followed by `x_l·x_m` for `l ≤ m`, `l` outer. Columns
/// are returned uncentered.
pub fn expand_interactions(x: &Matrix) -> Matrix {
    let (n, d) = (x.nrows(), x.ncols());
    let width = d + d * (d + 1) / 2;
    let mut out = Vec::with_capacity(n * width);
    for i in 0..n {
        let r = x.row(i);
        out.extend_from_slice(r);
        for l in 0..d {
            for m in l..d {
                out.push(r[l] * r[m]);
            }
        }
    }
    Matrix::from_vec(n, width, out).expect("width matches")
}

pub fn interaction_names(names: &[String]) -> Vec<String> {
    let mut out = names.to_vec();
    for l in 0..names.len() {
        for m in l..names.len() {
            out.push(if l == m {
                format!("{}^2", names[l])
            } else {
                format!("{}*{}", names[l], names[m])
            });
        }
    }
    out
}

/// Group labels in ascending order, numerically when every label parses.
fn ordered_labels(labels: &[String]) -> Vec<String> {
    let set: BTreeSet<&String> = labels.iter().collect();
    let mut out: Vec<String> = set.into_iter().cloned().collect();
    if out.iter().all(|s| s.parse::<f64>().is_ok()) {
        out.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    out
}

fn build_group(label: Option<String>, table: &RawTable, rows: &[usize], expand: bool) -> Result<GroupData> {
    let raw: Vec<Vec<f64>> = rows.iter().map(|&i| table.x[i].clone()).collect();
    let mut x = Matrix::from_rows(&raw)?;
    let mut names = table.covariates.clone();
    if expand {
        x = expand_interactions(&x);
        names = interaction_names(&names);
    }
    let y: Vec<f64> = rows.iter().map(|&i| table.y[i].unwrap_or(f64::NAN)).collect();
    let delta: Vec<bool> = rows.iter().map(|&i| table.y[i].is_some()).collect();
    let data = Dataset::new(x, y, delta).map_err(|e| match &label {
        Some(l) => CliError::Input(format!("group '{l}': {e}")),
        None => CliError::Estimation(e),
    })?;
    let constant_columns: Vec<String> = (0..data.p())
        .filter(|&j| {
            let c = data.x().column(j);
            c.iter().all(|v| *v == c[0])
        })
        .map(|j| names[j].clone())
        .collect();
    for c in &constant_columns {
        match &label {
            Some(l) => log::warn!("covariate '{c}' is constant in group '{l}'"),
            None => log::warn!("covariate '{c}' is constant"),
        }
    }
    Ok(GroupData {
        label,
        covariates: names,
        data: data.centered(),
        constant_columns,
    })
}

/// Datasets from a parsed table: one per group label, or a single one when
/// no group column was given.
pub fn build_groups(table: &RawTable, expand: bool) -> Result<Vec<GroupData>> {
    match &table.group {
        None => {
            let rows: Vec<usize> = (0..table.x.len()).collect();
            Ok(vec![build_group(None, table, &rows, expand)?])
        }
        Some(labels) => ordered_labels(labels)
            .into_iter()
            .map(|l| {
                let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == l).collect();
                build_group(Some(l), table, &rows, expand)
            })
            .collect(),
    }
}

pub fn ingest_csv(path: &Path, opts: &IngestOptions) -> Result<Vec<GroupData>> {
    let file = std::fs::File::open(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let table = read_table(std::io::BufReader::new(file), opts)?;
    build_groups(&table, opts.expand_interactions)
}

/// Writes a group back as CSV with the centering undone. Missing responses
/// are written as `missing_token`.
pub fn write_csv<W: Write>(writer: W, group: &GroupData, response: &str, missing_token: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = group.covariates.clone();
    header.push(response.to_string());
    w.write_record(&header)?;
    let d = &group.data;
    let centers = d.column_centers();
    for i in 0..d.n() {
        let mut rec: Vec<String> = d
            .x()
            .row(i)
            .iter()
            .zip(centers)
            .map(|(v, c)| format!("{}", v + c))
            .collect();
        rec.push(if d.delta()[i] {
            format!("{}", d.y()[i])
        } else {
            missing_token.to_string()
        });
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: "<output>".into(),
        source,
    })?;
    Ok(())
}
