//! End-to-end streaming sessions.
//!
//! Frames are partitioned as they arrive; every completed segment is encoded
//! and compressed into the bank. A question event fires once the stream has
//! moved past its `at_frame` (or at end of stream, after the trailing segment
//! has been flushed); it retrieves from the bank, attends over the retrieved
//! blocks and is scored against ground truth when available.

mod bench;
mod config;
mod metrics;
mod needle;
mod report;

pub use bench::{bench_sweep, BenchCell, BenchRow, BenchSweep};
pub use config::{seed_from_env, AllocationMode, GuidanceSource, Partitioning, Pipeline, SessionConfig, SummaryMode};
pub use metrics::{boundary_f1, BoundaryScore};
pub use needle::{needle_events, needle_question, skewed_needle_spec};
pub use report::{
    emit_report, CompressionRecord, QuestionReport, ReportFormat, RetrievedBlock, SegmentSummary, SessionReport,
    Timings, CSV_COLUMNS,
};

use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
#[cfg(not(target_arch = "wasm32"))]
use std::time::Instant;

use thiserror::Error;

use crate::attn::{AttentionStack, AttnError, BlockSlot, KvBlock, LocalWindow};
use crate::bank::{BankError, CompressionConfig, KvBank, SharedBank, SpillWriter};
use crate::events::QuestionEvent;
use crate::partition::{PartitionError, Partitioner, Segment};
use crate::select::{oracle_select, SelectError};
use crate::stream::{FrameEmbedding, StreamError, StreamHeader};
use crate::synth::{GroundTruth, SyntheticStream};
use crate::tensor::cosine;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error("question {index}: {message}")]
    Event { index: usize, message: String },
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Attn(#[from] AttnError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("pipeline worker failed: {0}")]
    Worker(String),
}

/// Encodes segments and appends them to the bank, either inline or on two
/// worker threads connected by channels.
enum Stages {
    Inline { window: LocalWindow, records: Vec<CompressionRecord>, encode_ms: f64, append_ms: f64 },
    Threaded { tx: Option<mpsc::Sender<Work>>, handles: Vec<thread::JoinHandle<StageResult>> },
}

enum Work {
    Segment(Segment),
    Encoded(crate::attn::EncodedSegment),
    Barrier(mpsc::Sender<()>),
}

type StageResult = Result<(Vec<CompressionRecord>, f64), SessionError>;

fn append(
    bank: &SharedBank,
    encoded: crate::attn::EncodedSegment,
    compression: &CompressionConfig,
) -> Result<CompressionRecord, SessionError> {
    let segment = encoded.segment;
    let outcome = bank.compress_and_append(encoded, compression)?;
    let stats = bank.stats();
    Ok(CompressionRecord {
        segment,
        budget: outcome.allocation.budget,
        counts: outcome.allocation.counts,
        adjustment: outcome.allocation.adjustment,
        retained_mass: outcome.retained_mass,
        bank_blocks: stats.total_blocks,
        bank_bytes: stats.total_bytes,
    })
}

#[cfg(not(target_arch = "wasm32"))]
fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// The browser target has no monotonic clock in `std`; reports carry no timings there.
#[cfg(target_arch = "wasm32")]
#[derive(Clone, Copy)]
struct Instant;

#[cfg(target_arch = "wasm32")]
impl Instant {
    fn now() -> Self {
        Instant
    }
}

#[cfg(target_arch = "wasm32")]
fn elapsed_ms(_: Instant) -> f64 {
    0.0
}

impl Stages {
    fn new(
        pipeline: Pipeline,
        stack: &Arc<AttentionStack>,
        bank: &SharedBank,
        compression: &CompressionConfig,
        with_summary: bool,
    ) -> Self {
        match pipeline {
            Pipeline::Sequential => {
                Stages::Inline { window: stack.new_window(), records: Vec::new(), encode_ms: 0.0, append_ms: 0.0 }
            }
            Pipeline::Overlapped => {
                let (tx, encode_rx) = mpsc::channel::<Work>();
                let (append_tx, append_rx) = mpsc::channel::<Work>();
                let encoder_stack = Arc::clone(stack);
                let encoder = thread::spawn(move || -> StageResult {
                    let mut window = encoder_stack.new_window();
                    let mut ms = 0.0;
                    for work in encode_rx {
                        let forward = match work {
                            Work::Segment(seg) => {
                                let t = Instant::now();
                                let enc = encoder_stack.encode_segment(&mut window, &seg, with_summary)?;
                                ms += elapsed_ms(t);
                                Work::Encoded(enc)
                            }
                            other => other,
                        };
                        if append_tx.send(forward).is_err() {
                            break;
                        }
                    }
                    Ok((Vec::new(), ms))
                });
                let bank = bank.clone();
                let compression = compression.clone();
                let appender = thread::spawn(move || -> StageResult {
                    let mut records = Vec::new();
                    let mut ms = 0.0;
                    for work in append_rx {
                        match work {
                            Work::Encoded(enc) => {
                                let t = Instant::now();
                                records.push(append(&bank, enc, &compression)?);
                                ms += elapsed_ms(t);
                            }
                            Work::Barrier(reply) => {
                                let _ = reply.send(());
                            }
                            Work::Segment(_) => unreachable!("segments are encoded before reaching the appender"),
                        }
                    }
                    Ok((records, ms))
                });
                Stages::Threaded { tx: Some(tx), handles: vec![encoder, appender] }
            }
        }
    }

    fn submit(
        &mut self,
        segment: Segment,
        stack: &AttentionStack,
        bank: &SharedBank,
        compression: &CompressionConfig,
        with_summary: bool,
    ) -> Result<(), SessionError> {
        match self {
            Stages::Inline { window, records, encode_ms, append_ms } => {
                let t = Instant::now();
                let enc = stack.encode_segment(window, &segment, with_summary)?;
                *encode_ms += elapsed_ms(t);
                let t = Instant::now();
                records.push(append(bank, enc, compression)?);
                *append_ms += elapsed_ms(t);
                Ok(())
            }
            Stages::Threaded { tx, .. } => {
                let sent = tx.as_ref().map(|tx| tx.send(Work::Segment(segment)).is_ok()).unwrap_or(false);
                if sent {
                    Ok(())
                } else {
                    Err(self.join_error())
                }
            }
        }
    }

    /// Blocks until every submitted segment is in the bank.
    fn sync(&mut self) -> Result<(), SessionError> {
        if let Stages::Threaded { tx, .. } = self {
            let (reply_tx, reply_rx) = mpsc::channel();
            let ok = tx.as_ref().map(|tx| tx.send(Work::Barrier(reply_tx)).is_ok()).unwrap_or(false);
            if !ok || reply_rx.recv().is_err() {
                return Err(self.join_error());
            }
        }
        Ok(())
    }

    fn join_error(&mut self) -> SessionError {
        match self.finish() {
            Err(e) => e,
            Ok(_) => SessionError::Worker("pipeline stopped unexpectedly".into()),
        }
    }

    /// Stops the workers and returns the compression records and stage timings.
    fn finish(&mut self) -> Result<(Vec<CompressionRecord>, f64, f64), SessionError> {
        match self {
            Stages::Inline { records, encode_ms, append_ms, .. } => {
                Ok((std::mem::take(records), *encode_ms, *append_ms))
            }
            Stages::Threaded { tx, handles } => {
                tx.take();
                let mut results = Vec::new();
                for h in handles.drain(..) {
                    results.push(h.join().map_err(|_| SessionError::Worker("worker panicked".into()))?);
                }
                let mut it = results.into_iter();
                let (_, encode_ms) =
                    it.next().ok_or_else(|| SessionError::Worker("pipeline already finished".into()))??;
                let (records, append_ms) =
                    it.next().ok_or_else(|| SessionError::Worker("missing appender".into()))??;
                Ok((records, encode_ms, append_ms))
            }
        }
    }
}

/// Answer classes: a reference response and the id reported for it.
struct Classes {
    refs: Vec<(u32, Vec<f32>)>,
}

impl Classes {
    fn nearest(&self, readout: &[f32]) -> Option<u32> {
        let mut best: Option<(u32, f64)> = None;
        for (id, r) in &self.refs {
            if let Some(c) = cosine(readout, r) {
                if best.is_none_or(|(_, b)| c > b) {
                    best = Some((*id, c));
                }
            }
        }
        best.map(|(id, _)| id)
    }
}

struct QuestionContext<'a> {
    stack: &'a AttentionStack,
    bank: &'a SharedBank,
    config: &'a SessionConfig,
    truth: Option<&'a GroundTruth>,
    segments: &'a [SegmentSummary],
    classes: &'a Classes,
}

fn is_relevant(block: &KvBlock, target: &crate::synth::PlantedRange, segments: &[SegmentSummary]) -> bool {
    match block.origin.slot {
        BlockSlot::Frame(_) => target.contains(block.stream_pos),
        BlockSlot::Summary => {
            let Some(seg) = segments.iter().find(|s| s.id == block.origin.segment) else {
                return false;
            };
            let lo = seg.first_frame.max(target.first_frame);
            let hi = seg.last_frame.min(target.last_frame);
            let inside = if hi >= lo { hi - lo + 1 } else { 0 };
            2 * inside > seg.last_frame - seg.first_frame
        }
    }
}

fn answer(ctx: &QuestionContext<'_>, index: usize, event: &QuestionEvent) -> Result<QuestionReport, SessionError> {
    let criteria = ctx.stack.criterion_from_tokens(&event.tokens)?;
    let (retrieval, oracle, bank_blocks, bank_bytes) = ctx.bank.read(|bank| -> Result<_, SessionError> {
        let retrieval = bank.retrieve(&criteria, ctx.config.n_r, ctx.config.allocation.retrieval())?;
        let oracle = match &retrieval.allocation {
            Some(a) => {
                let ranges: Vec<Vec<&[f32]>> =
                    bank.layers().iter().map(|l| l.rep_keys().iter().map(Vec::as_slice).collect()).collect();
                Some(oracle_select(&ranges, &criteria, a.budget)?)
            }
            None => None,
        };
        let stats = bank.stats();
        Ok((retrieval, oracle, stats.total_blocks, stats.total_bytes))
    })?;

    let context: Vec<Vec<&KvBlock>> = retrieval.blocks.iter().map(|l| l.iter().collect()).collect();
    let qa = ctx.stack.qa_attend(&context, &event.tokens)?;
    let retrieved: Vec<RetrievedBlock> = retrieval
        .blocks
        .iter()
        .flatten()
        .map(|b| RetrievedBlock {
            layer: b.layer,
            segment: b.origin.segment,
            slot: b.origin.slot,
            stream_pos: b.stream_pos,
        })
        .collect();
    let total = retrieved.len();

    let oracle_agreement = oracle.filter(|_| total > 0).map(|o| {
        let shared: usize = o
            .iter()
            .zip(&retrieval.indices)
            .map(|(want, got)| got.iter().filter(|i| want.binary_search(i).is_ok()).count())
            .sum();
        shared as f64 / total as f64
    });

    let target = match (ctx.truth, event.expected_segment) {
        (Some(t), Some(e)) => t.segments.get(e as usize),
        _ => None,
    };
    let (needle_precision, distractor_fraction) = match target {
        Some(range) if total > 0 => {
            let hits = retrieval.blocks.iter().flatten().filter(|b| is_relevant(b, range, ctx.segments)).count();
            let p = hits as f64 / total as f64;
            (Some(p), Some(1.0 - p))
        }
        _ => (None, None),
    };
    let answered_segment = if total > 0 { ctx.classes.nearest(&qa.context_readout) } else { None };
    let correct = event.expected_segment.map(|e| answered_segment == Some(e));

    Ok(QuestionReport {
        index,
        at_frame: event.at_frame,
        expected_segment: event.expected_segment,
        retrieved,
        per_layer: retrieval.indices.iter().map(Vec::len).collect(),
        budget: retrieval.allocation.as_ref().map_or(0, |a| a.budget),
        oracle_agreement,
        needle_precision,
        distractor_fraction,
        answered_segment,
        correct,
        attended_tokens: qa.attended_tokens,
        bank_blocks,
        bank_bytes,
    })
}

/// Runs a full session over `frames`.
///
/// With `truth`, answers are classified among the planted segments and
/// needle precision is scored; without it, answers are classified among the
/// detected segments by their summaries.
pub fn run_session<I>(
    header: &StreamHeader,
    frames: I,
    events: &[QuestionEvent],
    truth: Option<&GroundTruth>,
    config: &SessionConfig,
) -> Result<SessionReport, SessionError>
where
    I: IntoIterator<Item = Result<FrameEmbedding, StreamError>>,
{
    let started = Instant::now();
    config.validate()?;
    header.validate()?;
    if config.stack.input_dim != header.embed_dim as usize {
        return Err(SessionError::Config(format!(
            "stack input_dim {} does not match stream embed_dim {}",
            config.stack.input_dim, header.embed_dim
        )));
    }
    for (index, e) in events.iter().enumerate() {
        e.validate(None, config.stack.model_dim).map_err(|message| SessionError::Event { index, message })?;
    }
    let stack = Arc::new(AttentionStack::new(config.stack)?);
    let guidance = config.guidance.tokens(config.stack.model_dim)?;
    let criteria = stack.criterion_from_tokens(&guidance)?;
    let compression = CompressionConfig { ratio: config.theta, criteria, allocation: config.allocation.compression() };
    let with_summary = config.summary == SummaryMode::On;

    let mut bank = KvBank::new(config.stack.layers, header.patch_count as usize, config.stack.kv_dim());
    if let Some(path) = &config.spill {
        bank = bank.with_spill(SpillWriter::create(
            path,
            config.stack.layers,
            header.patch_count as usize,
            config.stack.kv_dim(),
        )?);
    }
    let bank = SharedBank::new(bank);
    let mut partitioner = match config.partitioning {
        Partitioning::Semantic => Partitioner::new(config.partition)?,
        Partitioning::Uniform => Partitioner::uniform(config.partition.max_len)?,
    };

    let mut classes = Classes { refs: Vec::new() };
    if let Some(t) = truth {
        for s in 0..t.segments.len() {
            classes.refs.push((s as u32, stack.reference_response(t.direction_of_segment(s))?));
        }
    }

    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by_key(|&i| events[i].at_frame);
    let mut pending = order.into_iter().peekable();

    let mut stages = Stages::new(config.pipeline, &stack, &bank, &compression, with_summary);
    let mut segments: Vec<SegmentSummary> = Vec::new();
    let mut questions: Vec<QuestionReport> = Vec::new();
    let mut question_ms: Vec<(usize, f64)> = Vec::new();
    let mut frame_count = 0u64;

    let on_segment = |seg: Segment,
                      stages: &mut Stages,
                      segments: &mut Vec<SegmentSummary>,
                      classes: &mut Classes|
     -> Result<(), SessionError> {
        segments.push(SegmentSummary {
            id: seg.id,
            first_frame: seg.first_frame,
            last_frame: seg.last_frame,
            frames: seg.frames.len(),
            short: seg.short,
            merges: seg.merge_log.len(),
        });
        if truth.is_none() {
            classes.refs.push((seg.id, stack.reference_response(&seg.summary)?));
        }
        stages.submit(seg, &stack, &bank, &compression, with_summary)
    };

    let mut fire = |upto: Option<u64>,
                    stages: &mut Stages,
                    segments: &[SegmentSummary],
                    classes: &Classes,
                    questions: &mut Vec<QuestionReport>|
     -> Result<(), SessionError> {
        let mut synced = false;
        while let Some(&i) = pending.peek() {
            if upto.is_some_and(|f| events[i].at_frame >= f) {
                break;
            }
            if !synced {
                stages.sync()?;
                synced = true;
            }
            pending.next();
            let t = Instant::now();
            let ctx = QuestionContext { stack: &stack, bank: &bank, config, truth, segments, classes };
            questions.push(answer(&ctx, i, &events[i])?);
            question_ms.push((i, elapsed_ms(t)));
        }
        Ok(())
    };

    let run = (|| -> Result<(), SessionError> {
        for frame in frames {
            let frame = frame?;
            if !frame.conforms_to(header) {
                return Err(SessionError::Stream(StreamError::Format(format!(
                    "frame {} does not match the stream header",
                    frame.index
                ))));
            }
            fire(Some(frame.index), &mut stages, &segments, &classes, &mut questions)?;
            frame_count += 1;
            if let Some(seg) = partitioner.push_frame(frame)? {
                on_segment(seg, &mut stages, &mut segments, &mut classes)?;
            }
        }
        if let Some(seg) = partitioner.finalize() {
            on_segment(seg, &mut stages, &mut segments, &mut classes)?;
        }
        fire(None, &mut stages, &segments, &classes, &mut questions)
    })();
    let finished = stages.finish();
    run?;
    let (compression_records, encode_ms, append_ms) = finished?;

    if let Some(q) = questions.iter().find(|q| q.at_frame >= frame_count) {
        return Err(SessionError::Event {
            index: q.index,
            message: format!("at_frame {} is past the end of a {frame_count}-frame stream", q.at_frame),
        });
    }
    bank.flush()?;
    questions.sort_by_key(|q| q.index);
    question_ms.sort_by_key(|(i, _)| *i);

    let boundaries = segments.iter().skip(1).map(|s| s.first_frame).collect();
    Ok(SessionReport {
        theta: config.theta,
        n_r: config.n_r,
        partitioning: config.partitioning,
        summary: config.summary,
        allocation: config.allocation,
        frames: frame_count,
        segments,
        boundaries,
        compression: compression_records,
        questions,
        bank: bank.stats(),
        timings: cfg!(not(target_arch = "wasm32")).then(|| Timings {
            total_ms: elapsed_ms(started),
            encode_ms,
            append_ms,
            question_ms: question_ms.into_iter().map(|(_, ms)| ms).collect(),
        }),
    })
}

/// [`run_session`] over an in-memory synthetic stream with its ground truth.
pub fn run_synthetic(
    stream: &SyntheticStream,
    events: &[QuestionEvent],
    config: &SessionConfig,
) -> Result<SessionReport, SessionError> {
    run_session(&stream.header, stream.frames.iter().cloned().map(Ok), events, Some(&stream.truth), config)
}
