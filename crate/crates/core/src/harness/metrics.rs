use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::HarnessError;

pub const HEADER: [&str; 6] = ["run_id", "mode", "seed", "index", "metric", "value"];
pub const SUMMARY_HEADER: [&str; 6] = ["cell", "metric", "index", "n", "mean", "std"];

/// One observation: `index` is an epoch for curves and a slot for traces.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub run_id: String,
    pub mode: String,
    pub seed: u64,
    pub index: u64,
    pub metric: String,
    pub value: f64,
}

/// Mean and sample standard deviation of one metric point across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub cell: String,
    pub metric: String,
    pub index: u64,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn writer(path: &Path) -> Result<csv::Writer<File>, HarnessError> {
    let file = File::create(path).map_err(io_err(path))?;
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(file))
}

/// Writes the fixed header followed by `rows`, in order.
pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<(), HarnessError> {
    let mut w = writer(path)?;
    w.write_record(HEADER).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.run_id.as_str(),
            r.mode.as_str(),
            &r.seed.to_string(),
            &r.index.to_string(),
            r.metric.as_str(),
            &r.value.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>, HarnessError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(HEADER) {
        return Err(HarnessError::Format {
            path: path.to_path_buf(),
            message: format!("unexpected header {header:?}"),
        });
    }
    let bad = |message: String| HarnessError::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut rows = Vec::new();
    for record in r.records() {
        let rec = record.map_err(csv_err(path))?;
        let num = |i: usize| rec[i].parse::<u64>().map_err(|e| bad(format!("column {}: {e}", HEADER[i])));
        rows.push(MetricRow {
            run_id: rec[0].to_string(),
            mode: rec[1].to_string(),
            seed: num(2)?,
            index: num(3)?,
            metric: rec[4].to_string(),
            value: rec[5].parse().map_err(|e| bad(format!("column value: {e}")))?,
        });
    }
    Ok(rows)
}

/// Groups rows by `(cell_of(run_id), metric, index)` and aggregates over
/// the seeds in each group.
pub fn summarize<F>(rows: &[MetricRow], cell_of: F) -> Vec<SummaryRow>
where
    F: Fn(&MetricRow) -> String,
{
    let mut groups: BTreeMap<(String, String, u64), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((cell_of(r), r.metric.clone(), r.index))
            .or_default()
            .push(r.value);
    }
    groups
        .into_iter()
        .map(|((cell, metric, index), values)| {
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                cell,
                metric,
                index,
                n,
                mean,
                std,
            }
        })
        .collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), HarnessError> {
    let mut w = writer(path)?;
    w.write_record(SUMMARY_HEADER).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.cell.as_str(),
            r.metric.as_str(),
            &r.index.to_string(),
            &r.n.to_string(),
            &r.mean.to_string(),
            &r.std.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Wall-clock seconds per epoch; kept apart from the metric files so those
/// stay reproducible.
pub fn write_timing(path: &Path, rows: &[(String, u64, f64)]) -> Result<(), HarnessError> {
    let mut f = File::create(path).map_err(io_err(path))?;
    let mut text = String::from("run_id,epoch,seconds\n");
    for (run, epoch, secs) in rows {
        text.push_str(&format!("{run},{epoch},{secs}\n"));
    }
    f.write_all(text.as_bytes()).map_err(io_err(path))
}
