use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::{AllocationMode, Partitioning, SessionConfig, SummaryMode};
use super::metrics::boundary_f1;
use super::report::SessionReport;
use super::{run_session, SessionError};
use crate::events::QuestionEvent;
use crate::stream::{FrameEmbedding, StreamHeader};
use crate::synth::GroundTruth;

/// One point of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BenchCell {
    pub partitioning: Partitioning,
    pub summary: SummaryMode,
    pub allocation: AllocationMode,
}

impl BenchCell {
    /// Every combination of the three mode axes.
    pub fn all() -> Vec<BenchCell> {
        let mut cells = Vec::new();
        for partitioning in [Partitioning::Semantic, Partitioning::Uniform] {
            for summary in [SummaryMode::On, SummaryMode::Off] {
                for allocation in AllocationMode::ALL {
                    cells.push(BenchCell { partitioning, summary, allocation });
                }
            }
        }
        cells
    }
}

/// Aggregates of one session in the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub partitioning: Partitioning,
    pub summary: SummaryMode,
    pub allocation: AllocationMode,
    pub theta: f64,
    pub n_r: usize,
    pub questions: usize,
    pub needle_precision: Option<f64>,
    pub accuracy: Option<f64>,
    pub oracle_agreement: Option<f64>,
    pub distractor_fraction: Option<f64>,
    pub retained_mass: Option<f64>,
    pub attended_tokens: Option<f64>,
    pub bank_blocks: usize,
    pub bank_bytes: usize,
    pub boundary_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSweep {
    pub rows: Vec<BenchRow>,
    pub reports: Vec<SessionReport>,
}

impl BenchSweep {
    /// Writes the rows as CSV with a header line.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), SessionError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
        w.write_record([
            "partitioning",
            "summary",
            "allocation",
            "theta",
            "n_r",
            "questions",
            "needle_precision",
            "accuracy",
            "oracle_agreement",
            "distractor_fraction",
            "retained_mass",
            "attended_tokens",
            "bank_blocks",
            "bank_bytes",
            "boundary_f1",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.partitioning.to_string(),
                r.summary.to_string(),
                r.allocation.to_string(),
                r.theta.to_string(),
                r.n_r.to_string(),
                r.questions.to_string(),
                opt(r.needle_precision),
                opt(r.accuracy),
                opt(r.oracle_agreement),
                opt(r.distractor_fraction),
                opt(r.retained_mass),
                opt(r.attended_tokens),
                r.bank_blocks.to_string(),
                r.bank_bytes.to_string(),
                opt(r.boundary_f1),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs one session per (cell, θ, N_r) over the same in-memory stream.
#[allow(clippy::too_many_arguments)]
pub fn bench_sweep(
    header: &StreamHeader,
    frames: &[FrameEmbedding],
    events: &[QuestionEvent],
    truth: Option<&GroundTruth>,
    base: &SessionConfig,
    thetas: &[f64],
    nrs: &[usize],
    cells: &[BenchCell],
) -> Result<BenchSweep, SessionError> {
    if thetas.is_empty() || nrs.is_empty() || cells.is_empty() {
        return Err(SessionError::Config("bench grids must be non-empty".into()));
    }
    let planted = truth.map(GroundTruth::boundaries);
    let mut sweep = BenchSweep { rows: Vec::new(), reports: Vec::new() };
    for cell in cells {
        for &theta in thetas {
            for &n_r in nrs {
                let mut config = base.clone().with_modes(cell.partitioning, cell.summary, cell.allocation);
                config.theta = theta;
                config.n_r = n_r;
                config.spill = None;
                let report = run_session(header, frames.iter().cloned().map(Ok), events, truth, &config)?;
                sweep.rows.push(BenchRow {
                    partitioning: cell.partitioning,
                    summary: cell.summary,
                    allocation: cell.allocation,
                    theta,
                    n_r,
                    questions: report.questions.len(),
                    needle_precision: report.needle_precision(),
                    accuracy: report.accuracy(),
                    oracle_agreement: report.oracle_agreement(),
                    distractor_fraction: report.distractor_fraction(),
                    retained_mass: report.retained_mass(),
                    attended_tokens: report.attended_tokens(),
                    bank_blocks: report.bank.total_blocks,
                    bank_bytes: report.bank.total_bytes,
                    boundary_f1: planted.as_ref().map(|p| boundary_f1(&report.boundaries, p).f1),
                });
                sweep.reports.push(report);
            }
        }
    }
    Ok(sweep)
}
