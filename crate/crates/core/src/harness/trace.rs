use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Summary of one fitted option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionStats {
    /// Window samples assigned to this option by the mixture fit.
    pub samples: usize,
    /// Share of the weighted mixture mass.
    pub mass: f64,
    /// Rollouts of this iteration that executed the option.
    pub selected: usize,
}

/// One line of the learning curve. Iteration 0 describes the initial
/// uniform rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub mean_return: f64,
    pub n_options: usize,
    pub ess: f64,
    pub wall_ms: f64,
    /// Measured time, recorded whether or not `wall_ms` is.
    pub elapsed_ms: f64,
    pub n_samples: usize,
    pub options: Vec<OptionStats>,
}

/// Error that stopped a run, with the iteration it happened in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub iteration: usize,
    pub message: String,
}

/// The CSV projection of an [`IterationRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub mean_return: f64,
    pub n_options: usize,
    pub ess: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningTrace {
    pub records: Vec<IterationRecord>,
}

impl LearningTrace {
    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn rows(&self) -> Vec<TraceRow> {
        self.records
            .iter()
            .map(|r| TraceRow {
                iter: r.iter,
                mean_return: r.mean_return,
                n_options: r.n_options,
                ess: r.ess,
                wall_ms: r.wall_ms,
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(&self.rows(), out)
    }

    /// One JSON object per iteration; a failure, if any, is the last line.
    pub fn write_jsonl<W: Write>(&self, mut out: W, failure: Option<&RunFailure>) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        if let Some(f) = failure {
            let v = serde_json::json!({ "failure": f });
            serde_json::to_writer(&mut out, &v)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn write_rows<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["iter", "mean_return", "n_options", "ess", "wall_ms"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["iter", "mean_return", "n_options", "ess", "wall_ms"] {
        return Err(Error::Serde(format!("unexpected trace header {header:?}")));
    }
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Per-iteration mean and standard deviation over several runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub iter: usize,
    pub runs: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_options: f64,
    pub std_options: f64,
}

/// Aggregates traces iteration by iteration; iterations missing from a
/// shorter (failed) run are averaged over the runs that have them.
pub fn aggregate(traces: &[Vec<TraceRow>]) -> Vec<AggregateRow> {
    let len = traces.iter().map(|t| t.len()).max().unwrap_or(0);
    let moments = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (m, var.sqrt())
    };
    (0..len)
        .map(|k| {
            let rows: Vec<&TraceRow> = traces.iter().filter_map(|t| t.get(k)).collect();
            let ret: Vec<f64> = rows.iter().map(|r| r.mean_return).collect();
            let opt: Vec<f64> = rows.iter().map(|r| r.n_options as f64).collect();
            let (mean_return, std_return) = moments(&ret);
            let (mean_options, std_options) = moments(&opt);
            AggregateRow {
                iter: rows[0].iter,
                runs: rows.len(),
                mean_return,
                std_return,
                mean_options,
                std_options,
            }
        })
        .collect()
}

pub fn write_aggregate<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
