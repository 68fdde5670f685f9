//! JSON-lines metrics with a closing summary line.

use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// One scalar snapshot. Non-finite values are stored as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    /// What produced the record, e.g. `round`, `epoch`, `attack`.
    pub stage: String,
    pub step: u64,
    pub values: BTreeMap<String, Option<f64>>,
}

impl MetricsRecord {
    pub fn new(run_id: &str, seed: u64, stage: &str, step: u64) -> Self {
        Self {
            run_id: run_id.to_string(),
            seed,
            stage: stage.to_string(),
            step,
            values: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, v: f64) -> Self {
        self.set(key, v);
        self
    }

    pub fn set(&mut self, key: &str, v: f64) {
        self.values
            .insert(key.to_string(), v.is_finite().then_some(v));
    }

    pub fn set_null(&mut self, key: &str) {
        self.values.insert(key.to_string(), None);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeySummary {
    pub count: u64,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub last: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub summary: bool,
    pub run_id: Option<String>,
    pub seed: Option<u64>,
    pub records: u64,
    /// Per `stage/key` aggregates over finite values.
    pub keys: BTreeMap<String, KeySummary>,
}

pub fn summarize(records: &[MetricsRecord]) -> Summary {
    let mut keys: BTreeMap<String, KeySummary> = BTreeMap::new();
    for r in records {
        for (k, v) in &r.values {
            let e = keys
                .entry(format!("{}/{k}", r.stage))
                .or_insert(KeySummary {
                    count: 0,
                    min: None,
                    max: None,
                    last: None,
                });
            e.last = *v;
            if let Some(v) = v {
                e.count += 1;
                e.min = Some(e.min.map_or(*v, |m| m.min(*v)));
                e.max = Some(e.max.map_or(*v, |m| m.max(*v)));
            }
        }
    }
    Summary {
        summary: true,
        run_id: records.first().map(|r| r.run_id.clone()),
        seed: records.first().map(|r| r.seed),
        records: records.len() as u64,
        keys,
    }
}

pub fn write_metrics_to(
    records: &[MetricsRecord],
    out: &mut impl Write,
) -> Result<(), HarnessError> {
    let io = |e: std::io::Error| HarnessError::Io(e.to_string());
    for r in records {
        serde_json::to_writer(&mut *out, r).map_err(|e| HarnessError::Io(e.to_string()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    serde_json::to_writer(&mut *out, &summarize(records))
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    out.write_all(b"\n").map_err(io)?;
    out.flush().map_err(io)
}

pub fn write_metrics(records: &[MetricsRecord], path: &Path) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    let f = std::fs::File::create(path)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    write_metrics_to(records, &mut BufWriter::new(f))
}

/// Reads records back, checking that the file ends with a summary line.
pub fn read_metrics(path: &Path) -> Result<(Vec<MetricsRecord>, Summary), HarnessError> {
    let f = std::fs::File::open(path).map_err(|e| HarnessError::Io(e.to_string()))?;
    let lines: Vec<String> = std::io::BufReader::new(f)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    let (last, body) = lines
        .split_last()
        .ok_or_else(|| HarnessError::Data("empty metrics file".into()))?;
    let summary: Summary =
        serde_json::from_str(last).map_err(|e| HarnessError::Data(format!("summary line: {e}")))?;
    let records = body
        .iter()
        .map(|l| serde_json::from_str(l).map_err(|e| HarnessError::Data(e.to_string())))
        .collect::<Result<_, _>>()?;
    Ok((records, summary))
}
