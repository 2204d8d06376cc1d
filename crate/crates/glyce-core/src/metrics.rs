//! Span F1, accuracy, and the ablation report.
//!
//! Tagging is scored at the span level: label sequences decode into
//! (start, end, kind) spans under BIO or BMES, and F1 counts exact
//! matches. Malformed transitions are repaired the conventional way: a
//! continuation without an opener starts a new span, and an opener while
//! a span is active closes the active one first.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{GlyceError, Result};

/// Tagging label scheme. BMES marks segment boundaries with a single
/// span kind; BIO carries `n_types` span kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Bio { n_types: usize },
    Bmes,
}

pub const BMES_B: usize = 0;
pub const BMES_M: usize = 1;
pub const BMES_E: usize = 2;
pub const BMES_S: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub kind: usize,
}

impl Scheme {
    pub fn n_labels(&self) -> usize {
        match self {
            Scheme::Bio { n_types } => 1 + 2 * n_types,
            Scheme::Bmes => 4,
        }
    }

    pub fn label_name(&self, id: usize) -> Result<String> {
        self.check(id)?;
        Ok(match self {
            Scheme::Bmes => ["B", "M", "E", "S"][id].to_string(),
            Scheme::Bio { .. } => {
                if id == 0 {
                    String::from("O")
                } else if id % 2 == 1 {
                    format!("B-{}", (id - 1) / 2)
                } else {
                    format!("I-{}", (id - 2) / 2)
                }
            }
        })
    }

    pub fn parse_label(&self, s: &str) -> Result<usize> {
        let bad = || GlyceError::Data(format!("unknown label {s:?} for {self:?}"));
        match self {
            Scheme::Bmes => match s {
                "B" => Ok(BMES_B),
                "M" => Ok(BMES_M),
                "E" => Ok(BMES_E),
                "S" => Ok(BMES_S),
                _ => Err(bad()),
            },
            Scheme::Bio { n_types } => {
                if s == "O" {
                    return Ok(0);
                }
                let (prefix, kind) = s.split_once('-').ok_or_else(bad)?;
                let t: usize = kind.parse().map_err(|_| bad())?;
                if t >= *n_types {
                    return Err(bad());
                }
                match prefix {
                    "B" => Ok(1 + 2 * t),
                    "I" => Ok(2 + 2 * t),
                    _ => Err(bad()),
                }
            }
        }
    }

    fn check(&self, id: usize) -> Result<()> {
        if id >= self.n_labels() {
            return Err(GlyceError::Data(format!(
                "label id {id} out of range for {self:?} ({} labels)",
                self.n_labels()
            )));
        }
        Ok(())
    }

    /// Decodes a label sequence into spans, applying the repairs above.
    pub fn decode_spans(&self, labels: &[usize]) -> Result<Vec<Span>> {
        for &l in labels {
            self.check(l)?;
        }
        let mut spans = Vec::new();
        match self {
            Scheme::Bmes => {
                let mut open: Option<usize> = None;
                for (i, &l) in labels.iter().enumerate() {
                    match l {
                        BMES_B => {
                            if let Some(s) = open {
                                spans.push(Span { start: s, end: i, kind: 0 });
                            }
                            open = Some(i);
                        }
                        BMES_M => {
                            if open.is_none() {
                                open = Some(i);
                            }
                        }
                        BMES_E => {
                            let s = open.unwrap_or(i);
                            spans.push(Span { start: s, end: i + 1, kind: 0 });
                            open = None;
                        }
                        _ => {
                            if let Some(s) = open {
                                spans.push(Span { start: s, end: i, kind: 0 });
                            }
                            spans.push(Span { start: i, end: i + 1, kind: 0 });
                            open = None;
                        }
                    }
                }
                if let Some(s) = open {
                    spans.push(Span { start: s, end: labels.len(), kind: 0 });
                }
            }
            Scheme::Bio { .. } => {
                let mut open: Option<(usize, usize)> = None;
                for (i, &l) in labels.iter().enumerate() {
                    if l == 0 {
                        if let Some((s, t)) = open.take() {
                            spans.push(Span { start: s, end: i, kind: t });
                        }
                        continue;
                    }
                    let t = (l - 1) / 2;
                    let is_begin = l % 2 == 1;
                    match open {
                        Some((_, ot)) if !is_begin && ot == t => {}
                        _ => {
                            if let Some((s, ot)) = open {
                                spans.push(Span { start: s, end: i, kind: ot });
                            }
                            open = Some((i, t));
                        }
                    }
                }
                if let Some((s, t)) = open {
                    spans.push(Span { start: s, end: labels.len(), kind: t });
                }
            }
        }
        Ok(spans)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub matched: usize,
}

pub fn span_f1_from_counts(gold: usize, predicted: usize, matched: usize) -> SpanF1 {
    let precision = if predicted == 0 { 0.0 } else { matched as f64 / predicted as f64 };
    let recall = if gold == 0 { 0.0 } else { matched as f64 / gold as f64 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    SpanF1 { precision, recall, f1, gold, predicted, matched }
}

/// Exact-match span F1 of predicted labels against gold.
pub fn tagging_f1(pred: &[usize], gold: &[usize], scheme: Scheme) -> Result<SpanF1> {
    if pred.len() != gold.len() {
        return Err(GlyceError::Shape(format!(
            "tagging_f1: {} predictions vs {} gold labels",
            pred.len(),
            gold.len()
        )));
    }
    let pred_spans = scheme.decode_spans(pred)?;
    let gold_spans: BTreeSet<Span> = scheme.decode_spans(gold)?.into_iter().collect();
    let matched = pred_spans.iter().filter(|s| gold_spans.contains(s)).count();
    Ok(span_f1_from_counts(gold_spans.len(), pred_spans.len(), matched))
}

/// Accumulates span counts over many sequences before the final ratio.
#[derive(Debug, Clone, Copy, Default)]
pub struct SpanCounts {
    pub gold: usize,
    pub predicted: usize,
    pub matched: usize,
}

impl SpanCounts {
    pub fn update(&mut self, pred: &[usize], gold: &[usize], scheme: Scheme) -> Result<()> {
        let one = tagging_f1(pred, gold, scheme)?;
        self.gold += one.gold;
        self.predicted += one.predicted;
        self.matched += one.matched;
        Ok(())
    }

    pub fn f1(&self) -> SpanF1 {
        span_f1_from_counts(self.gold, self.predicted, self.matched)
    }
}

pub fn accuracy(pred: &[usize], gold: &[usize]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(GlyceError::Shape(format!(
            "accuracy: {} predictions vs {} gold",
            pred.len(),
            gold.len()
        )));
    }
    if pred.is_empty() {
        return Err(GlyceError::Contract(String::from("accuracy: empty inputs")));
    }
    let hits = pred.iter().zip(gold).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Best-dev metrics of one run, as they enter the ablation report.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub f1: Option<SpanF1>,
    pub accuracy: Option<f64>,
}

impl RunMetrics {
    /// The number a run is selected and early-stopped on: span F1 when
    /// present, accuracy otherwise.
    pub fn primary(&self) -> Option<f64> {
        self.f1.as_ref().map(|f| f.f1).or(self.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub name: String,
    /// Dataset tag; all runs in one report must share it.
    pub dataset: String,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub metrics: RunMetrics,
    pub delta_f1: Option<f64>,
    pub delta_accuracy: Option<f64>,
    pub is_baseline: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub title: String,
    pub baseline: String,
    pub rows: Vec<ReportRow>,
    pub caveat: String,
}

/// Deltas in this report come from small synthetic corpora; stated so no
/// one reads them as full-scale results.
pub const REPORT_CAVEAT: &str =
    "deltas measured on small synthetic data; not comparable to full-scale corpus results";

/// Rows keep input order; every metric is compared against the named
/// baseline run.
pub fn ablation_report(
    title: &str,
    runs: &[RunSummary],
    baseline: &str,
) -> Result<AblationReport> {
    if runs.len() < 2 {
        return Err(GlyceError::Contract(format!(
            "ablation report needs >= 2 runs, got {}",
            runs.len()
        )));
    }
    let dataset = &runs[0].dataset;
    for r in runs {
        if &r.dataset != dataset {
            return Err(GlyceError::Contract(format!(
                "ablation report mixes datasets {dataset:?} and {:?}",
                r.dataset
            )));
        }
    }
    let base = runs
        .iter()
        .find(|r| r.name == baseline)
        .ok_or_else(|| GlyceError::Contract(format!("baseline run {baseline:?} not present")))?
        .clone();
    let rows = runs
        .iter()
        .map(|r| ReportRow {
            name: r.name.clone(),
            metrics: r.metrics.clone(),
            delta_f1: match (&r.metrics.f1, &base.metrics.f1) {
                (Some(a), Some(b)) => Some(a.f1 - b.f1),
                _ => None,
            },
            delta_accuracy: match (r.metrics.accuracy, base.metrics.accuracy) {
                (Some(a), Some(b)) => Some(a - b),
                _ => None,
            },
            is_baseline: r.name == baseline,
        })
        .collect();
    Ok(AblationReport {
        title: title.to_string(),
        baseline: baseline.to_string(),
        rows,
        caveat: String::from(REPORT_CAVEAT),
    })
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:+.4}"),
        None => String::from("-"),
    }
}

impl AblationReport {
    pub fn render(&self) -> String {
        let mut out = format!("# {} (baseline: {})\n", self.title, self.baseline);
        out.push_str(&format!(
            "{:<24} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "run", "P", "R", "F1", "acc", "dF1", "dAcc"
        ));
        for row in &self.rows {
            let (p, r, f) = match &row.metrics.f1 {
                Some(s) => (
                    format!("{:.4}", s.precision),
                    format!("{:.4}", s.recall),
                    format!("{:.4}", s.f1),
                ),
                None => (String::from("-"), String::from("-"), String::from("-")),
            };
            let acc = match row.metrics.accuracy {
                Some(a) => format!("{a:.4}"),
                None => String::from("-"),
            };
            let mark = if row.is_baseline { " (baseline)" } else { "" };
            out.push_str(&format!(
                "{:<24} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}{}\n",
                row.name,
                p,
                r,
                f,
                acc,
                cell(row.delta_f1),
                cell(row.delta_accuracy),
                mark
            ));
        }
        out.push_str(&format!("note: {}\n", self.caveat));
        out
    }
}
