//! CSV data files and JSON reports.
//!
//! Recognized columns: `y`, `d` (0/1), `stratum`, `pair`, `cluster`,
//! `cluster_size` (N_g) and covariates `x1`, `x2`, … Other columns are
//! carried through untouched when a file is rewritten. A `cluster` column
//! switches to cluster mode. Row numbers in errors count data rows from 1.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::analysis::Data;
use crate::error::{Error, Result};
use crate::model::{Cluster, ClusterSample, Sample, Unit};

/// Raw CSV contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Table {
    pub fn read(path: &Path) -> Result<Table> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(BufReader::new(file));
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if headers.iter().all(|h| h.is_empty()) {
            return Err(Error::Schema(format!(
                "{} has no header row",
                path.display()
            )));
        }
        let rows = reader
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, csv::Error>>()?;
        Ok(Table { headers, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    /// Sets column `name` to `values`, appending it when absent.
    pub fn set_column(&mut self, name: &str, values: Vec<String>) {
        assert_eq!(values.len(), self.rows.len());
        match self.column(name) {
            Some(j) => {
                for (row, v) in self.rows.iter_mut().zip(values) {
                    row[j] = v;
                }
            }
            None => {
                self.headers.push(name.to_string());
                for (row, v) in self.rows.iter_mut().zip(values) {
                    row.push(v);
                }
            }
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(&self.headers)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush().map_err(io_err(path))?;
        Ok(())
    }
}

/// Which columns must be present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadOptions {
    pub require_outcome: bool,
    pub require_treatment: bool,
}

impl ReadOptions {
    /// `y` and `d` required, as for analysis and testing.
    pub fn analysis() -> Self {
        ReadOptions {
            require_outcome: true,
            require_treatment: true,
        }
    }

    /// Neither required, as for assignment; missing values read as 0.
    pub fn assignment() -> Self {
        ReadOptions {
            require_outcome: false,
            require_treatment: false,
        }
    }
}

struct Columns {
    y: Option<usize>,
    d: Option<usize>,
    stratum: Option<usize>,
    pair: Option<usize>,
    cluster: Option<usize>,
    cluster_size: Option<usize>,
    x: Vec<usize>,
}

fn locate(table: &Table, opts: ReadOptions) -> Result<Columns> {
    let mut x: Vec<(usize, usize)> = table
        .headers
        .iter()
        .enumerate()
        .filter_map(|(j, h)| {
            h.strip_prefix('x')
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .map(|k| (k, j))
        })
        .collect();
    x.sort();
    for (expected, (k, _)) in x.iter().enumerate() {
        if *k != expected + 1 {
            return Err(Error::Schema(format!(
                "covariate columns must be x1..xk without gaps; found x{k} but no x{}",
                expected + 1
            )));
        }
    }
    let cols = Columns {
        y: table.column("y"),
        d: table.column("d"),
        stratum: table.column("stratum"),
        pair: table.column("pair"),
        cluster: table.column("cluster"),
        cluster_size: table.column("cluster_size"),
        x: x.into_iter().map(|(_, j)| j).collect(),
    };
    if opts.require_outcome && cols.y.is_none() {
        return Err(Error::Schema("missing required column `y`".into()));
    }
    if opts.require_treatment && cols.d.is_none() {
        return Err(Error::Schema("missing required column `d`".into()));
    }
    Ok(cols)
}

struct Cell<'a> {
    row: usize,
    column: &'a str,
    text: &'a str,
}

impl Cell<'_> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Data {
            row: self.row,
            column: self.column.to_string(),
            message: message.into(),
        }
    }

    fn real(&self) -> Result<f64> {
        if self.text.is_empty() {
            return Err(self.error("missing value"));
        }
        match self.text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.error(format!("`{}` is not a finite number", self.text))),
        }
    }

    fn integer(&self) -> Result<i64> {
        self.text
            .parse::<i64>()
            .map_err(|_| self.error(format!("`{}` is not an integer", self.text)))
    }

    fn binary(&self) -> Result<u8> {
        match self.text {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(self.error(format!("treatment must be 0 or 1, found `{other}`"))),
        }
    }

    fn label(&self) -> Result<String> {
        if self.text.is_empty() {
            Err(self.error("missing stratum label"))
        } else {
            Ok(self.text.to_string())
        }
    }
}

fn cell<'a>(table: &'a Table, i: usize, j: usize) -> Cell<'a> {
    Cell {
        row: i + 1,
        column: &table.headers[j],
        text: table.rows[i].get(j).map_or("", String::as_str),
    }
}

/// Parses a table into unit-level or cluster data.
pub fn parse_table(table: &Table, opts: ReadOptions) -> Result<Data> {
    let cols = locate(table, opts)?;
    let mut units = Vec::with_capacity(table.rows.len());
    for i in 0..table.rows.len() {
        let outcome = cols
            .y
            .map(|j| cell(table, i, j).real())
            .transpose()?
            .unwrap_or(0.0);
        let treatment = cols
            .d
            .map(|j| cell(table, i, j).binary())
            .transpose()?
            .unwrap_or(0);
        let mut unit = Unit::new(outcome, treatment);
        unit.covariates = cols
            .x
            .iter()
            .map(|&j| cell(table, i, j).real())
            .collect::<Result<_>>()?;
        unit.stratum = cols
            .stratum
            .map(|j| cell(table, i, j).label())
            .transpose()?;
        unit.pair_id = cols.pair.map(|j| cell(table, i, j).integer()).transpose()?;
        unit.cluster_id = cols
            .cluster
            .map(|j| cell(table, i, j).integer())
            .transpose()?;
        units.push(unit);
    }
    if cols.cluster.is_none() {
        return Ok(Data::Units(Sample::new(units)));
    }

    let mut order: Vec<i64> = Vec::new();
    let mut clusters: BTreeMap<i64, Cluster> = BTreeMap::new();
    for (i, u) in units.iter().enumerate() {
        let id = u.cluster_id.expect("cluster column present");
        let size =
            cols.cluster_size
                .map(|j| {
                    let c = cell(table, i, j);
                    c.integer().and_then(|v| {
                        usize::try_from(v).ok().filter(|&v| v > 0).ok_or_else(|| {
                            c.error(format!("cluster size must be positive, found {v}"))
                        })
                    })
                })
                .transpose()?;
        let row = i + 1;
        match clusters.get_mut(&id) {
            None => {
                order.push(id);
                clusters.insert(
                    id,
                    Cluster {
                        id,
                        size,
                        members: vec![u.outcome],
                        treatment: u.treatment,
                        stratum: u.stratum.clone(),
                    },
                );
            }
            Some(c) => {
                let conflict = |column: &str, message: String| Error::Data {
                    row,
                    column: column.to_string(),
                    message,
                };
                if c.size != size {
                    return Err(conflict(
                        "cluster_size",
                        format!(
                            "cluster {id} has inconsistent cluster_size: {} here, {} on an earlier row",
                            fmt_opt(size),
                            fmt_opt(c.size)
                        ),
                    ));
                }
                if c.treatment != u.treatment {
                    return Err(conflict(
                        "d",
                        format!("cluster {id} mixes treated and control rows"),
                    ));
                }
                if c.stratum != u.stratum {
                    return Err(conflict(
                        "stratum",
                        format!("cluster {id} spans more than one stratum"),
                    ));
                }
                c.members.push(u.outcome);
            }
        }
    }
    let ordered: Vec<Cluster> = order
        .iter()
        .map(|id| clusters.remove(id).expect("inserted above"))
        .collect();
    let sample = ClusterSample::new(ordered);
    if let Some(c) = sample
        .clusters()
        .iter()
        .find(|c| c.size.is_some_and(|n| c.members.len() > n))
    {
        return Err(Error::Schema(format!(
            "cluster {} has {} rows but cluster_size {}",
            c.id,
            c.members.len(),
            fmt_opt(c.size)
        )));
    }
    Ok(Data::Clusters(sample))
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map_or_else(|| "missing".to_string(), |n| n.to_string())
}

/// Reads a CSV file into unit-level or cluster data.
pub fn read_sample(path: &Path, opts: ReadOptions) -> Result<Data> {
    parse_table(&Table::read(path)?, opts)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

/// Writes rows of already formatted fields as CSV.
pub fn write_csv(path: &Path, headers: &[&str], rows: &[Vec<String>]) -> Result<()> {
    Table {
        headers: headers.iter().map(|h| h.to_string()).collect(),
        rows: rows.to_vec(),
    }
    .write(path)
}
