//! JSON record mirrors of the in-memory training and evaluation types.
//!
//! History and run records go out as JSON lines, one object per record,
//! so downstream tooling can stream them; the metrics record for a
//! single evaluation is one object on its own.

use std::path::Path;

use glyce_core::metrics::{RunMetrics, RunSummary, SpanF1};
use glyce_core::train::EpochRecord;
use serde::{Deserialize, Serialize};

use crate::error::{write_bytes, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryLine {
    pub epoch: usize,
    pub stage: usize,
    pub stage_name: String,
    pub task_loss: f64,
    pub cls_loss: f64,
    pub lambda: f64,
    pub total_loss: f64,
    pub dev_metric: Option<f64>,
}

impl From<&EpochRecord> for HistoryLine {
    fn from(r: &EpochRecord) -> HistoryLine {
        HistoryLine {
            epoch: r.epoch,
            stage: r.stage,
            stage_name: r.stage_name.clone(),
            task_loss: r.task_loss,
            cls_loss: r.cls_loss,
            lambda: r.lambda,
            total_loss: r.total_loss,
            dev_metric: r.dev_metric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Record {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub matched: usize,
}

impl From<&SpanF1> for F1Record {
    fn from(s: &SpanF1) -> F1Record {
        F1Record {
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            gold: s.gold,
            predicted: s.predicted,
            matched: s.matched,
        }
    }
}

/// One evaluation: which split, how many items, and the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub split: String,
    pub n_items: usize,
    pub f1: Option<F1Record>,
    pub accuracy: Option<f64>,
    /// Span F1 when present, accuracy otherwise; what runs are ranked on.
    pub primary: Option<f64>,
}

impl MetricsRecord {
    pub fn new(split: &str, n_items: usize, m: &RunMetrics) -> MetricsRecord {
        MetricsRecord {
            split: split.to_string(),
            n_items,
            f1: m.f1.as_ref().map(F1Record::from),
            accuracy: m.accuracy,
            primary: m.primary(),
        }
    }
}

/// One ablation run, as a line of runs.jsonl.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub dataset: String,
    pub f1: Option<F1Record>,
    pub accuracy: Option<f64>,
    pub primary: Option<f64>,
}

impl From<&RunSummary> for RunRecord {
    fn from(r: &RunSummary) -> RunRecord {
        RunRecord {
            name: r.name.clone(),
            dataset: r.dataset.clone(),
            f1: r.metrics.f1.as_ref().map(F1Record::from),
            accuracy: r.metrics.accuracy,
            primary: r.metrics.primary(),
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string(value).map_err(|e| CliError::Compute(format!("json encoding: {e}")))
}

pub fn render_history(history: &[EpochRecord]) -> CliResult<String> {
    let mut out = String::new();
    for rec in history {
        out.push_str(&to_json(&HistoryLine::from(rec))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_history(history: &[EpochRecord], path: &Path) -> CliResult<()> {
    write_bytes(path, render_history(history)?.as_bytes())
}

pub fn render_metrics(record: &MetricsRecord) -> CliResult<String> {
    to_json(record)
}

pub fn save_metrics(record: &MetricsRecord, path: &Path) -> CliResult<()> {
    let mut text = render_metrics(record)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn render_runs(runs: &[RunSummary]) -> CliResult<String> {
    let mut out = String::new();
    for run in runs {
        out.push_str(&to_json(&RunRecord::from(run))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_runs(runs: &[RunSummary], path: &Path) -> CliResult<()> {
    write_bytes(path, render_runs(runs)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_lines_roundtrip_through_json() {
        let rec = EpochRecord {
            epoch: 3,
            stage: 1,
            stage_name: String::from("joint"),
            task_loss: 0.5,
            cls_loss: 0.25,
            lambda: 0.0512,
            total_loss: 0.4872,
            dev_metric: Some(0.75),
        };
        let text = render_history(&[rec.clone()]).unwrap();
        let back: HistoryLine = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(back, HistoryLine::from(&rec));
    }

    #[test]
    fn metrics_record_carries_primary() {
        let m = RunMetrics { f1: None, accuracy: Some(0.9) };
        let rec = MetricsRecord::new("dev", 100, &m);
        assert_eq!(rec.primary, Some(0.9));
        let text = render_metrics(&rec).unwrap();
        assert!(text.contains("\"split\":\"dev\""), "{text}");
    }
}
