use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use streamkv::attn::AttentionStack;
use streamkv::bank::load_spill;
use streamkv::events::{read_events, write_events};
use streamkv::session::{
    bench_sweep, emit_report, needle_events, run_session, seed_from_env, AllocationMode, BenchCell, Partitioning,
    ReportFormat, SessionConfig, SummaryMode,
};
use streamkv::stream::{read_stream, write_stream, FrameEmbedding};
use streamkv::synth::{gen_synthetic, GroundTruth, SyntheticSpec};

#[derive(Parser)]
#[command(name = "streamkv", version, about = "Streaming KV-cache compression and retrieval sessions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted synthetic stream from a spec.
    Gen {
        /// SyntheticSpec as JSON.
        #[arg(long)]
        spec: PathBuf,
        /// Output stream file. Ground truth goes to `<out>.truth.json`.
        #[arg(long)]
        out: PathBuf,
        /// Also write one question per planted segment, asked at the end of the stream.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Session config whose stack embeds the questions.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Stream a file through one session and write its report.
    Run {
        #[arg(long)]
        stream: PathBuf,
        /// Question events, one JSON object per line.
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report destination; `-` writes to stdout.
        #[arg(long, default_value = "-")]
        report: PathBuf,
        #[arg(long, default_value = "json")]
        format: ReportFormat,
        /// Ground truth for scoring. Defaults to `<stream>.truth.json` when present.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Sweep compression ratios, retrieval counts and mode cells.
    Bench {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,0.6,0.8,0.9")]
        theta: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "8")]
        nr: Vec<usize>,
        /// `all`, or comma-separated `partitioning:summary:allocation` cells
        /// such as `semantic:on:adaptive-adaptive`.
        #[arg(long, default_value = "all")]
        modes: String,
        /// Directory for `bench.csv` and `bench.json`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Print the stats of a spilled bank.
    Inspect {
        #[arg(long)]
        bank: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

fn truth_path(stream: &Path) -> PathBuf {
    let mut name = stream.as_os_str().to_owned();
    name.push(".truth.json");
    PathBuf::from(name)
}

fn load_config(path: Option<&Path>) -> Result<SessionConfig> {
    let mut config = match path {
        Some(p) => read_json(p)?,
        None => SessionConfig::default(),
    };
    if let Some(seed) = seed_from_env()? {
        config = config.with_seed(seed);
    }
    config.validate()?;
    Ok(config)
}

fn load_events(path: Option<&Path>) -> Result<Vec<streamkv::events::QuestionEvent>> {
    match path {
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            read_events(BufReader::new(file)).with_context(|| format!("reading {}", p.display()))
        }
        None => Ok(Vec::new()),
    }
}

fn load_truth(explicit: Option<&Path>, stream: &Path) -> Result<Option<GroundTruth>> {
    match explicit {
        Some(p) => read_json(p).map(Some),
        None => {
            let sibling = truth_path(stream);
            if sibling.exists() {
                read_json(&sibling).map(Some)
            } else {
                Ok(None)
            }
        }
    }
}

fn parse_cells(modes: &str) -> Result<Vec<BenchCell>> {
    if modes == "all" {
        return Ok(BenchCell::all());
    }
    modes
        .split(',')
        .map(|cell| {
            let parts: Vec<&str> = cell.trim().split(':').collect();
            let [p, s, a] = parts[..] else {
                bail!("mode cell {cell:?} is not partitioning:summary:allocation");
            };
            let partitioning = match p {
                "semantic" => Partitioning::Semantic,
                "uniform" => Partitioning::Uniform,
                other => bail!("unknown partitioning {other:?}"),
            };
            let summary = match s {
                "on" => SummaryMode::On,
                "off" => SummaryMode::Off,
                other => bail!("unknown summary mode {other:?}"),
            };
            let allocation: AllocationMode = a.parse().map_err(anyhow::Error::msg)?;
            Ok(BenchCell { partitioning, summary, allocation })
        })
        .collect()
}

fn gen(spec: &Path, out: &Path, events: Option<&Path>, config: Option<&Path>) -> Result<()> {
    let mut spec: SyntheticSpec = read_json(spec)?;
    if let Some(seed) = seed_from_env()? {
        spec.seed = seed;
    }
    let stream = gen_synthetic(&spec)?;
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_stream(&stream.header, &stream.frames, BufWriter::new(file))?;
    let truth_file = File::create(truth_path(out))?;
    serde_json::to_writer(BufWriter::new(truth_file), &stream.truth)?;
    if let Some(events_path) = events {
        let config = load_config(config)?;
        let stack = AttentionStack::new(config.stack)?;
        let questions = needle_events(&stack, &stream.truth, stream.frames.len().saturating_sub(1) as u64)?;
        write_events(&questions, BufWriter::new(File::create(events_path)?))?;
    }
    eprintln!("wrote {} frames in {} planted segments to {}", stream.frames.len(), spec.segments.len(), out.display());
    Ok(())
}

fn run(
    stream: &Path,
    events: Option<&Path>,
    config: Option<&Path>,
    report: &Path,
    format: ReportFormat,
    truth: Option<&Path>,
) -> Result<()> {
    let config = load_config(config)?;
    let events = load_events(events)?;
    let truth = load_truth(truth, stream)?;
    let file = File::open(stream).with_context(|| format!("opening {}", stream.display()))?;
    let (header, frames) = read_stream(BufReader::new(file))?;
    let result = run_session(&header, frames, &events, truth.as_ref(), &config)?;
    if report == Path::new("-") {
        emit_report(&result, format, io::stdout().lock())?;
    } else {
        let file = File::create(report).with_context(|| format!("creating {}", report.display()))?;
        emit_report(&result, format, BufWriter::new(file))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench(
    stream: &Path,
    events: Option<&Path>,
    config: Option<&Path>,
    thetas: &[f64],
    nrs: &[usize],
    modes: &str,
    out: &Path,
    truth: Option<&Path>,
) -> Result<()> {
    let config = load_config(config)?;
    let events = load_events(events)?;
    let truth = load_truth(truth, stream)?;
    let cells = parse_cells(modes)?;
    let file = File::open(stream).with_context(|| format!("opening {}", stream.display()))?;
    let (header, reader) = read_stream(BufReader::new(file))?;
    let frames: Vec<FrameEmbedding> = reader.collect::<Result<_, _>>()?;
    let sweep = bench_sweep(&header, &frames, &events, truth.as_ref(), &config, thetas, nrs, &cells)?;
    fs::create_dir_all(out)?;
    sweep.write_csv(BufWriter::new(File::create(out.join("bench.csv"))?))?;
    let mut json = BufWriter::new(File::create(out.join("bench.json"))?);
    serde_json::to_writer_pretty(&mut json, &sweep.rows)?;
    json.flush()?;
    eprintln!("wrote {} rows to {}", sweep.rows.len(), out.display());
    Ok(())
}

fn inspect(bank: &Path) -> Result<()> {
    let bank = load_spill(bank).with_context(|| format!("loading {}", bank.display()))?;
    let mut stdout = io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, &bank.stats())?;
    writeln!(stdout)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen { spec, out, events, config } => gen(spec, out, events.as_deref(), config.as_deref()),
        Command::Run { stream, events, config, report, format, truth } => {
            run(stream, events.as_deref(), config.as_deref(), report, *format, truth.as_deref())
        }
        Command::Bench { stream, events, config, theta, nr, modes, out, truth } => {
            bench(stream, events.as_deref(), config.as_deref(), theta, nr, modes, out, truth.as_deref())
        }
        Command::Inspect { bank } => inspect(bank),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
