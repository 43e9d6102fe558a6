use super::run::generate_streams;
use super::{HarnessError, ScenarioConfig};
use crate::canonical;
use crate::model::{AnalysisResult, Metric, WorkerId};
use crate::store::{decode_payloads, RecordStore};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

pub const CSV_HEADER: &str = "worker,metric,window_start_ms,window_end_ms,value,input_count,insufficient";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

impl FromStr for ExportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "jsonl" => Ok(Self::Jsonl),
            other => Err(HarnessError::Config(format!("unknown export format {other:?}"))),
        }
    }
}

/// Analysis results of one series with window start in `[t0, t1)`.
pub fn read_results(
    store: &dyn RecordStore,
    worker: &WorkerId,
    metric: Metric,
    t0: u64,
    t1: u64,
) -> Result<Vec<AnalysisResult>, HarnessError> {
    let rows = store.scan(worker, metric.as_str(), t0, t1);
    decode_payloads(&rows).map_err(|e| HarnessError::Config(format!("undecodable result: {e}")))
}

/// Writes one result series to `path`; returns the number of data rows.
pub fn export_series(
    store: &dyn RecordStore,
    worker: &WorkerId,
    metric: &str,
    t0: u64,
    t1: u64,
    format: ExportFormat,
    path: &Path,
) -> Result<usize, HarnessError> {
    let metric = Metric::parse(metric)
        .ok_or_else(|| HarnessError::Config(format!("unknown metric {metric:?}")))?;
    let results = read_results(store, worker, metric, t0, t1)?;
    let io = |e: std::io::Error| HarnessError::io(path, e);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    match format {
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            let csv_err = |e: csv::Error| HarnessError::io(path, e.into());
            w.write_record(CSV_HEADER.split(',')).map_err(csv_err)?;
            for r in &results {
                w.write_record([
                    r.worker.to_string(),
                    r.metric.to_string(),
                    r.window_start.to_string(),
                    r.window_end.to_string(),
                    r.value.map(|v| v.to_string()).unwrap_or_default(),
                    r.input_count.to_string(),
                    r.insufficient.to_string(),
                ])
                .map_err(csv_err)?;
            }
            w.flush().map_err(io)?;
        }
        ExportFormat::Jsonl => {
            for r in &results {
                writeln!(out, "{}", canonical::encode_string(r)).map_err(io)?;
            }
            out.flush().map_err(io)?;
        }
    }
    Ok(results.len())
}

/// Writes each worker's raw synthetic streams and ground truth to `dir`:
/// `<worker>.ecg.jsonl`, `<worker>.accel.jsonl` and `<worker>.truth.json`.
pub fn dump_streams(cfg: &ScenarioConfig, dir: &Path) -> Result<(), HarnessError> {
    cfg.check()?;
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    for spec in &cfg.workers {
        let s = generate_streams(cfg, spec)?;
        let lines = |items: Vec<String>| {
            let mut text = items.join("\n");
            if !text.is_empty() {
                text.push('\n');
            }
            text
        };
        let files = [
            (
                format!("{}.ecg.jsonl", spec.id),
                lines(s.ecg.iter().map(canonical::encode_string).collect()),
            ),
            (
                format!("{}.accel.jsonl", spec.id),
                lines(s.accel.iter().map(canonical::encode_string).collect()),
            ),
            (
                format!("{}.truth.json", spec.id),
                canonical::value_to_string(&serde_json::json!({
                    "posture_labels": s.posture,
                    "r_peak_times_ms": s.r_peaks_ms,
                    "rr_clamped": s.rr_clamped,
                })) + "\n",
            ),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
        }
    }
    Ok(())
}
