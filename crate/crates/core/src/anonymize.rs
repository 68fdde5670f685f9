//! Mondrian multidimensional k-anonymity over string-celled tables.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnonError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("table has {n} rows, fewer than k = {k}")]
    TooFewRows { n: usize, k: usize },
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("column {column:?} row {row}: {value:?} is not numeric")]
    NotNumeric {
        column: String,
        row: usize,
        value: String,
    },
    #[error("row {row} has {found} cells, expected {expected}")]
    Ragged {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("partitions do not cover every row exactly once")]
    NotCovering,
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QiKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self, AnonError> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != headers.len() {
                return Err(AnonError::Ragged {
                    row: i,
                    found: r.len(),
                    expected: headers.len(),
                });
            }
        }
        Ok(Self { headers, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize, AnonError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| AnonError::UnknownColumn(name.to_string()))
    }

    pub fn read_csv(path: &Path) -> Result<Self, AnonError> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| AnonError::Csv(e.to_string()))?;
        let headers = rdr
            .headers()
            .map_err(|e| AnonError::Csv(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(
                rec.map_err(|e| AnonError::Csv(e.to_string()))?
                    .iter()
                    .map(str::to_string)
                    .collect(),
            );
        }
        Self::new(headers, rows)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), AnonError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| AnonError::Csv(e.to_string()))?;
        w.write_record(&self.headers)
            .map_err(|e| AnonError::Csv(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r)
                .map_err(|e| AnonError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| AnonError::Csv(e.to_string()))
    }
}

/// A table with declared quasi-identifier and sensitive columns.
#[derive(Debug, Clone, PartialEq)]
pub struct QiTable {
    pub table: Table,
    pub qi: Vec<(usize, QiKind)>,
    pub sensitive: Vec<usize>,
    numeric: Vec<Option<Vec<f64>>>,
}

impl QiTable {
    pub fn new(table: Table, qi: &[(&str, QiKind)], sensitive: &[&str]) -> Result<Self, AnonError> {
        let mut cols = Vec::new();
        let mut numeric = Vec::new();
        for &(name, kind) in qi {
            let c = table.column(name)?;
            cols.push((c, kind));
            numeric.push(match kind {
                QiKind::Categorical => None,
                QiKind::Numeric => Some(
                    table
                        .rows
                        .iter()
                        .enumerate()
                        .map(|(i, r)| {
                            r[c].trim()
                                .parse::<f64>()
                                .ok()
                                .filter(|v| v.is_finite())
                                .ok_or_else(|| AnonError::NotNumeric {
                                    column: name.to_string(),
                                    row: i,
                                    value: r[c].clone(),
                                })
                        })
                        .collect::<Result<_, _>>()?,
                ),
            });
        }
        let sensitive = sensitive
            .iter()
            .map(|s| table.column(s))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            table,
            qi: cols,
            sensitive,
            numeric,
        })
    }

    /// Declares columns numeric when every cell parses as a number.
    pub fn infer(table: Table, qi: &[&str], sensitive: &[&str]) -> Result<Self, AnonError> {
        let kinds: Vec<(&str, QiKind)> = qi
            .iter()
            .map(|&name| {
                let c = table.column(name)?;
                let all_num = table
                    .rows
                    .iter()
                    .all(|r| r[c].trim().parse::<f64>().is_ok_and(f64::is_finite));
                Ok((
                    name,
                    if all_num {
                        QiKind::Numeric
                    } else {
                        QiKind::Categorical
                    },
                ))
            })
            .collect::<Result<_, AnonError>>()?;
        Self::new(table, &kinds, sensitive)
    }

    pub fn len(&self) -> usize {
        self.table.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.rows.is_empty()
    }

    fn cell(&self, d: usize, row: usize) -> &str {
        &self.table.rows[row][self.qi[d].0]
    }
}

struct Spans {
    numeric: Vec<f64>,
    distinct: Vec<usize>,
}

fn width(t: &QiTable, d: usize, rows: &[usize], global: &Spans) -> f64 {
    match &t.numeric[d] {
        Some(v) => {
            if global.numeric[d] == 0.0 {
                return 0.0;
            }
            let (lo, hi) = rows
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                    (lo.min(v[r]), hi.max(v[r]))
                });
            (hi - lo) / global.numeric[d]
        }
        None => {
            let distinct: BTreeSet<&str> = rows.iter().map(|&r| t.cell(d, r)).collect();
            if distinct.len() < 2 {
                0.0
            } else {
                distinct.len() as f64 / global.distinct[d] as f64
            }
        }
    }
}

fn split(t: &QiTable, d: usize, rows: &[usize]) -> (Vec<usize>, Vec<usize>) {
    match &t.numeric[d] {
        Some(v) => {
            let mut vals: Vec<f64> = rows.iter().map(|&r| v[r]).collect();
            vals.sort_by(f64::total_cmp);
            let median = vals[(vals.len() - 1) / 2];
            rows.iter().partition(|&&r| v[r] <= median)
        }
        None => {
            let distinct: Vec<&str> = rows
                .iter()
                .map(|&r| t.cell(d, r))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let left: BTreeSet<&str> = distinct[..distinct.len() / 2].iter().copied().collect();
            rows.iter().partition(|&&r| left.contains(t.cell(d, r)))
        }
    }
}

/// Greedy recursive partition. Each cut goes on the widest normalized
/// dimension whose split leaves both children with at least `k` rows;
/// numeric cuts send values `≤` the lower median left.
pub fn mondrian_partition(t: &QiTable, k: usize) -> Result<Vec<Vec<usize>>, AnonError> {
    if k == 0 {
        return Err(AnonError::InvalidK);
    }
    if t.len() < k {
        return Err(AnonError::TooFewRows { n: t.len(), k });
    }
    let all: Vec<usize> = (0..t.len()).collect();
    let global = Spans {
        numeric: (0..t.qi.len())
            .map(|d| match &t.numeric[d] {
                Some(v) => {
                    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    hi - lo
                }
                None => 0.0,
            })
            .collect(),
        distinct: (0..t.qi.len())
            .map(|d| {
                all.iter()
                    .map(|&r| t.cell(d, r))
                    .collect::<BTreeSet<_>>()
                    .len()
            })
            .collect(),
    };
    let mut out = Vec::new();
    let mut stack = vec![all];
    while let Some(rows) = stack.pop() {
        let mut dims: Vec<(usize, f64)> = (0..t.qi.len())
            .map(|d| (d, width(t, d, &rows, &global)))
            .collect();
        // widest first, lowest index on ties
        dims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let cut = dims
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|&(d, _)| split(t, d, &rows))
            .find(|(l, r)| l.len() >= k && r.len() >= k);
        match cut {
            Some((l, r)) => {
                stack.push(r);
                stack.push(l);
            }
            None => out.push(rows),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnonymizedTable {
    pub table: Table,
    pub qi_columns: Vec<usize>,
    pub partition_id: Vec<usize>,
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Replaces each quasi-identifier with its partition's `min-max` range or
/// `{a,b}` value set. Other columns pass through untouched.
pub fn generalize(t: &QiTable, partitions: &[Vec<usize>]) -> Result<AnonymizedTable, AnonError> {
    let n = t.len();
    let mut pid = vec![usize::MAX; n];
    for (p, rows) in partitions.iter().enumerate() {
        for &r in rows {
            if r >= n || pid[r] != usize::MAX {
                return Err(AnonError::NotCovering);
            }
            pid[r] = p;
        }
    }
    if pid.contains(&usize::MAX) {
        return Err(AnonError::NotCovering);
    }
    let mut rows = t.table.rows.clone();
    for part in partitions {
        for (d, &(col, _)) in t.qi.iter().enumerate() {
            let label = match &t.numeric[d] {
                Some(v) => {
                    let lo = part.iter().map(|&r| v[r]).fold(f64::INFINITY, f64::min);
                    let hi = part.iter().map(|&r| v[r]).fold(f64::NEG_INFINITY, f64::max);
                    format!("{}-{}", fmt_num(lo), fmt_num(hi))
                }
                None => {
                    let set: BTreeSet<&str> = part.iter().map(|&r| t.cell(d, r)).collect();
                    format!("{{{}}}", set.into_iter().collect::<Vec<_>>().join(","))
                }
            };
            for &r in part {
                rows[r][col] = label.clone();
            }
        }
    }
    Ok(AnonymizedTable {
        table: Table {
            headers: t.table.headers.clone(),
            rows,
        },
        qi_columns: t.qi.iter().map(|q| q.0).collect(),
        partition_id: pid,
    })
}

/// Groups rows by their generalized quasi-identifier tuple.
pub fn equivalence_classes(anon: &AnonymizedTable) -> HashMap<Vec<&str>, Vec<usize>> {
    let mut groups: HashMap<Vec<&str>, Vec<usize>> = HashMap::new();
    for (i, r) in anon.table.rows.iter().enumerate() {
        let key = anon.qi_columns.iter().map(|&c| r[c].as_str()).collect();
        groups.entry(key).or_default().push(i);
    }
    groups
}

/// True iff every equivalence class has at least `k` rows.
pub fn verify_k_anonymity(anon: &AnonymizedTable, k: usize) -> bool {
    equivalence_classes(anon).values().all(|g| g.len() >= k)
}

/// Partition then generalize.
pub fn anonymize(t: &QiTable, k: usize) -> Result<AnonymizedTable, AnonError> {
    generalize(t, &mondrian_partition(t, k)?)
}
