use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{AllocationMode, Partitioning, SummaryMode};
use super::SessionError;
use crate::attn::BlockSlot;
use crate::bank::BankStats;

/// Where a retrieved block came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievedBlock {
    pub layer: usize,
    pub segment: u32,
    pub slot: BlockSlot,
    pub stream_pos: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionReport {
    /// Position of the event in the input file.
    pub index: usize,
    pub at_frame: u64,
    pub expected_segment: Option<u32>,
    pub retrieved: Vec<RetrievedBlock>,
    /// Retrieved blocks per layer.
    pub per_layer: Vec<usize>,
    /// `min(N_r × L, bank size)`.
    pub budget: usize,
    /// Share of retrieved blocks the reference selector also picks.
    pub oracle_agreement: Option<f64>,
    /// Share of retrieved blocks that belong to the expected segment.
    pub needle_precision: Option<f64>,
    /// Share of retrieved blocks from any other segment.
    pub distractor_fraction: Option<f64>,
    pub answered_segment: Option<u32>,
    pub correct: Option<bool>,
    /// Keys attended per question token, summed over layers and tokens.
    pub attended_tokens: usize,
    pub bank_blocks: usize,
    pub bank_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub id: u32,
    pub first_frame: u64,
    pub last_frame: u64,
    /// Post-merge length.
    pub frames: usize,
    pub short: bool,
    pub merges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRecord {
    pub segment: u32,
    pub budget: usize,
    pub counts: Vec<usize>,
    pub adjustment: i64,
    pub retained_mass: f64,
    pub bank_blocks: usize,
    pub bank_bytes: usize,
}

/// Wall-clock measurements. Not part of the deterministic content.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
    pub encode_ms: f64,
    pub append_ms: f64,
    pub question_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub theta: f64,
    pub n_r: usize,
    pub partitioning: Partitioning,
    pub summary: SummaryMode,
    pub allocation: AllocationMode,
    pub frames: u64,
    pub segments: Vec<SegmentSummary>,
    /// First frame of every segment after the first.
    pub boundaries: Vec<u64>,
    pub compression: Vec<CompressionRecord>,
    pub questions: Vec<QuestionReport>,
    pub bank: BankStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl SessionReport {
    /// The report without wall-clock data, for determinism comparisons.
    pub fn without_timings(&self) -> Self {
        Self { timings: None, ..self.clone() }
    }

    pub fn needle_precision(&self) -> Option<f64> {
        mean(self.questions.iter().filter_map(|q| q.needle_precision))
    }

    pub fn oracle_agreement(&self) -> Option<f64> {
        mean(self.questions.iter().filter_map(|q| q.oracle_agreement))
    }

    pub fn distractor_fraction(&self) -> Option<f64> {
        mean(self.questions.iter().filter_map(|q| q.distractor_fraction))
    }

    /// Fraction of scored questions answered with the expected segment.
    pub fn accuracy(&self) -> Option<f64> {
        mean(self.questions.iter().filter_map(|q| q.correct.map(|c| if c { 1.0 } else { 0.0 })))
    }

    pub fn attended_tokens(&self) -> Option<f64> {
        mean(self.questions.iter().map(|q| q.attended_tokens as f64))
    }

    /// Mean normalised guidance mass kept per compressed segment.
    pub fn retained_mass(&self) -> Option<f64> {
        mean(self.compression.iter().map(|c| c.retained_mass))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?}, expected json or csv")),
        }
    }
}

/// Columns of the per-question CSV table, in order.
pub const CSV_COLUMNS: [&str; 18] = [
    "question",
    "at_frame",
    "expected_segment",
    "answered_segment",
    "correct",
    "needle_precision",
    "oracle_agreement",
    "distractor_fraction",
    "retrieved_blocks",
    "budget",
    "attended_tokens",
    "bank_blocks",
    "bank_bytes",
    "theta",
    "n_r",
    "partitioning",
    "summary",
    "allocation",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `report` as pretty JSON or as one CSV row per question.
pub fn emit_report<W: Write>(report: &SessionReport, format: ReportFormat, sink: W) -> Result<(), SessionError> {
    match format {
        ReportFormat::Json => {
            let mut sink = sink;
            serde_json::to_writer_pretty(&mut sink, report)?;
            sink.write_all(b"\n")?;
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(sink);
            w.write_record(CSV_COLUMNS)?;
            for q in &report.questions {
                w.write_record([
                    q.index.to_string(),
                    q.at_frame.to_string(),
                    opt(q.expected_segment),
                    opt(q.answered_segment),
                    opt(q.correct),
                    opt(q.needle_precision),
                    opt(q.oracle_agreement),
                    opt(q.distractor_fraction),
                    q.retrieved.len().to_string(),
                    q.budget.to_string(),
                    q.attended_tokens.to_string(),
                    q.bank_blocks.to_string(),
                    q.bank_bytes.to_string(),
                    report.theta.to_string(),
                    report.n_r.to_string(),
                    report.partitioning.to_string(),
                    report.summary.to_string(),
                    report.allocation.to_string(),
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
