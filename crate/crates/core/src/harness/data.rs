//! Synthetic datasets and CSV I/O.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::HarnessError;
use crate::model::{Dataset, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Gaussians,
    Moons,
    ClassTemplates8x8,
}

impl FromStr for DatasetKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "gaussians" => Ok(Self::Gaussians),
            "moons" => Ok(Self::Moons),
            "class_templates_8x8" => Ok(Self::ClassTemplates8x8),
            other => Err(HarnessError::Config(format!(
                "unknown dataset kind {other:?}"
            ))),
        }
    }
}

pub const TEMPLATE_CLASSES: usize = 4;

/// Fixed 8×8 pattern for class `c`, row-major with entries in {0, 1}:
/// horizontal bars, vertical bars, the two diagonals, and a ring.
pub fn class_template(c: usize) -> Vec<f64> {
    let mut t = vec![0.0; 64];
    for r in 0..8 {
        for col in 0..8 {
            let on = match c % TEMPLATE_CLASSES {
                0 => r % 3 == 1,
                1 => col % 3 == 1,
                2 => r == col || r + col == 7,
                _ => {
                    let ring = r.min(col).min(7 - r).min(7 - col);
                    ring == 1
                }
            };
            t[r * 8 + col] = f64::from(u8::from(on));
        }
    }
    t
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Generates `n` rows with balanced classes (row `i` has class `i mod C`).
///
/// * gaussians: 2-D blobs at `−μ` and `+μ` with `μ = (1, 1)`, isotropic noise.
/// * moons: two interleaved half circles.
/// * class_templates_8x8: [`class_template`] plus Gaussian pixel noise.
pub fn synthesize_dataset(
    kind: DatasetKind,
    n: usize,
    noise: f64,
    rng: &mut Rng,
) -> Result<Dataset, HarnessError> {
    if n < 2 {
        return Err(HarnessError::Config(
            "a synthetic dataset needs n >= 2".into(),
        ));
    }
    if !(noise >= 0.0) {
        return Err(HarnessError::Config("noise must be >= 0".into()));
    }
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    match kind {
        DatasetKind::Gaussians => {
            for i in 0..n {
                let c = (i % 2) as i64;
                let mu = if c == 0 { -1.0 } else { 1.0 };
                rows.push(vec![mu + noise * normal(rng), mu + noise * normal(rng)]);
                y.push(c);
            }
        }
        DatasetKind::Moons => {
            let n_outer = n.div_ceil(2);
            let n_inner = n - n_outer;
            for i in 0..n {
                let c = i % 2;
                let j = i / 2;
                let m = if c == 0 { n_outer } else { n_inner };
                let t = if m > 1 {
                    std::f64::consts::PI * j as f64 / (m - 1) as f64
                } else {
                    0.0
                };
                let (px, py) = if c == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                rows.push(vec![px + noise * normal(rng), py + noise * normal(rng)]);
                y.push(c as i64);
            }
        }
        DatasetKind::ClassTemplates8x8 => {
            let templates: Vec<Vec<f64>> = (0..TEMPLATE_CLASSES).map(class_template).collect();
            for i in 0..n {
                let c = i % TEMPLATE_CLASSES;
                rows.push(
                    templates[c]
                        .iter()
                        .map(|v| v + noise * normal(rng))
                        .collect(),
                );
                y.push(c as i64);
            }
        }
    }
    Ok(Dataset::from_rows(&rows, y)?)
}

/// Random split into `(train, test)` with `⌊fraction·n⌋` test rows.
pub fn train_test_split(data: &Dataset, test_fraction: f64, rng: &mut Rng) -> (Dataset, Dataset) {
    let n = data.len();
    let n_test = ((test_fraction.clamp(0.0, 1.0) * n as f64).floor() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let (test, train) = idx.split_at(n_test);
    (data.subset(train), data.subset(test))
}

/// Label strings in first-appearance order, indexed by class id.
pub type LabelNames = Vec<String>;

/// Reads a CSV with a header. Every column but `label_column` must be
/// numeric; labels become dense ids in first-appearance order.
pub fn load_csv(path: &Path, label_column: &str) -> Result<(Dataset, LabelNames), HarnessError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| HarnessError::Io(e.to_string()))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| HarnessError::Io(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let lc = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| HarnessError::Data(format!("no label column {label_column:?}")))?;
    let mut ids: HashMap<String, i64> = HashMap::new();
    let mut names = Vec::new();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| HarnessError::Data(format!("row {}: {e}", i + 1)))?;
        let mut row = Vec::with_capacity(headers.len() - 1);
        for (j, cell) in rec.iter().enumerate() {
            if j == lc {
                let next = ids.len() as i64;
                let id = *ids.entry(cell.to_string()).or_insert_with(|| {
                    names.push(cell.to_string());
                    next
                });
                y.push(id);
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    HarnessError::Data(format!(
                        "row {} column {:?}: {cell:?} is not numeric",
                        i + 1,
                        headers[j]
                    ))
                })?;
                row.push(v);
            }
        }
        rows.push(row);
    }
    let d = headers.len() - 1;
    let x = Tensor::new(vec![rows.len(), d], rows.concat())?;
    Ok((Dataset::new(x, y)?, names))
}

/// Writes features as `x0..x{d-1}` and the label as `label`.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Io(e.to_string()))?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    w.write_record(&header)
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.row(i).iter().map(|v| format!("{v:?}")).collect();
        rec.push(data.y[i].to_string());
        w.write_record(&rec)
            .map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))
}
