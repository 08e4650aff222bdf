use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use pen_cli::AppState;
use pen_core::abbrev::MarkerTable;
use pen_core::normalize::{validate_against_task, RuleNormalizer, RuleSet};
use pen_core::pairbuilder::AlignedPair;
use pen_core::pipeline::{read_jsonl, Pipeline, PipelineConfig, Stage, StageOutcome};
use pen_core::review::{sample_gold, ReviewStore, SampleSpec, Stratum};
use pen_core::Error;
use serde_json::json;

#[derive(Parser)]
#[command(name = "pen", version, about = "Build, analyze and review normalization training pairs")]
struct Cli {
    /// JSON pipeline config; defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's workdir.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More logging (-v info, -vv debug).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct StageFlags {
    /// Produce missing upstream stage outputs first.
    #[arg(long)]
    with_upstream: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Zone-filter and decompose pages, split editions into passages.
    Prep(StageFlags),
    /// Build the n-gram index over edition passages.
    Index {
        #[command(flatten)]
        flags: StageFlags,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        doc_freq_cap: Option<usize>,
    },
    /// Retrieve candidate passages per page.
    Candidates {
        #[command(flatten)]
        flags: StageFlags,
        #[arg(long)]
        min_shared: Option<usize>,
        #[arg(long)]
        max_candidates: Option<usize>,
    },
    /// Character-align pages against their candidates.
    Align {
        #[command(flatten)]
        flags: StageFlags,
        #[arg(long)]
        beam_width: Option<usize>,
        #[arg(long)]
        min_align_chars: Option<usize>,
    },
    /// Filter alignments, chunk them into pairs and write the training manifest.
    Pairs {
        #[command(flatten)]
        flags: StageFlags,
        #[arg(long)]
        min_continuous_lines: Option<usize>,
        #[arg(long)]
        min_match_rate: Option<f64>,
        #[arg(long)]
        line_coverage_threshold: Option<f64>,
        /// Keep alignments whose passages come from different works.
        #[arg(long)]
        allow_cross_work: bool,
        #[arg(long)]
        min_bytes: Option<usize>,
        #[arg(long)]
        max_bytes: Option<usize>,
    },
    /// Token classification and over-normalization statistics.
    Analyze {
        #[command(flatten)]
        flags: StageFlags,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Normalize pair sources, or one string given with --text.
    Normalize {
        #[command(flatten)]
        flags: StageFlags,
        #[arg(long)]
        text: Option<String>,
        #[arg(long, default_value = "lat")]
        lang: String,
    },
    /// Score normalizer output.
    Eval(StageFlags),
    /// Draw a stratified gold sample into a review store.
    SampleGold {
        /// Pairs to sample from; defaults to the pairs stage output.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_enum, default_value_t = StratumArg::Work)]
        stratum: StratumArg,
        #[arg(long)]
        cap: Option<usize>,
        #[arg(long)]
        total: Option<usize>,
    },
    /// Serve the review API over a store.
    ReviewServe {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Shared token expected in the x-review-token header.
        #[arg(long, env = "PEN_REVIEW_TOKEN")]
        token: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StratumArg {
    Work,
    Document,
    Language,
}

impl From<StratumArg> for Stratum {
    fn from(s: StratumArg) -> Self {
        match s {
            StratumArg::Work => Stratum::Work,
            StratumArg::Document => Stratum::Document,
            StratumArg::Language => Stratum::Language,
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn load_config(cli: &Cli) -> pen_core::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    set(&mut cfg.workdir, cli.workdir.clone());
    set(&mut cfg.seed, cli.seed);
    match &cli.command {
        Command::Index { n, doc_freq_cap, .. } => {
            set(&mut cfg.n, *n);
            set(&mut cfg.doc_freq_cap, *doc_freq_cap);
        }
        Command::Candidates {
            min_shared,
            max_candidates,
            ..
        } => {
            set(&mut cfg.min_shared, *min_shared);
            set(&mut cfg.max_candidates, *max_candidates);
        }
        Command::Align {
            beam_width,
            min_align_chars,
            ..
        } => {
            set(&mut cfg.align.beam_width, *beam_width);
            set(&mut cfg.align.min_align_chars, *min_align_chars);
        }
        Command::Pairs {
            min_continuous_lines,
            min_match_rate,
            line_coverage_threshold,
            allow_cross_work,
            min_bytes,
            max_bytes,
            ..
        } => {
            set(&mut cfg.filter.min_continuous_lines, *min_continuous_lines);
            set(&mut cfg.filter.min_match_rate, *min_match_rate);
            set(&mut cfg.filter.line_coverage_threshold, *line_coverage_threshold);
            if *allow_cross_work {
                cfg.filter.require_same_work = false;
            }
            set(&mut cfg.chunk.min_bytes, *min_bytes);
            set(&mut cfg.chunk.max_bytes, *max_bytes);
        }
        Command::Analyze { bins, .. } => set(&mut cfg.analyze.bins, *bins),
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_outcome(out: &StageOutcome) -> anyhow::Result<()> {
    let dir = std::path::absolute(&out.dir)?;
    let line = json!({
        "stage": out.report.stage,
        "key": out.report.key,
        "dir": dir,
        "counts": out.report.counts,
        "rejects": out.report.rejects,
        "wall_ms": out.wall.as_millis() as u64,
    });
    println!("{}", serde_json::to_string(&line)?);
    Ok(())
}

fn run_stage(cli: &Cli, stage: Stage, flags: &StageFlags) -> anyhow::Result<()> {
    let pipeline = Pipeline::new(load_config(cli)?)?;
    let out = pipeline.run(stage, flags.with_upstream)?;
    print_outcome(&out)
}

fn normalize_text(cli: &Cli, text: &str, lang: &str) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let rules = match &cfg.normalize.rules {
        Some(p) => RuleSet::load(p)?,
        None => pen_core::normalize::default_rules(),
    };
    let result = RuleNormalizer::new(rules).normalize(text, lang);
    let violations = validate_against_task(&result.text, text, &cfg.normalize.validation);
    println!("{}", serde_json::to_string(&json!({ "result": result, "violations": violations }))?);
    Ok(())
}

fn markers(cfg: &PipelineConfig) -> pen_core::Result<MarkerTable> {
    match &cfg.markers {
        Some(p) => MarkerTable::load(p),
        None => Ok(MarkerTable::default()),
    }
}

fn sample(
    cli: &Cli,
    pairs: Option<&Path>,
    store: &Path,
    stratum: StratumArg,
    cap: Option<usize>,
    total: Option<usize>,
) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let path = match pairs {
        Some(p) => p.to_path_buf(),
        None => Pipeline::new(cfg.clone())?.stage_dir(Stage::Pairs)?.join("pairs.jsonl"),
    };
    if !path.exists() {
        return Err(Error::MissingInput(path).into());
    }
    let pairs: Vec<AlignedPair> = read_jsonl(&path)?;
    if pairs.is_empty() {
        return Err(Error::Config(format!("{} holds no pairs", path.display())).into());
    }
    let spec = SampleSpec {
        stratum: stratum.into(),
        per_stratum_cap: cap,
        total,
        seed: cfg.seed,
    };
    let (sample, report) = sample_gold(&pairs, &spec);
    let mut store = ReviewStore::open(store)?;
    let added = store.add_pairs(&sample)?;
    println!("{}", serde_json::to_string(&json!({ "added": added, "sample": report }))?);
    Ok(())
}

fn review_serve(cli: &Cli, store: &Path, bind: &str, token: Option<String>) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let store = ReviewStore::open(store).with_context(|| format!("opening review store {}", store.display()))?;
    let state = AppState::new(store, markers(&cfg)?, token);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(pen_cli::serve(state, bind))
        .with_context(|| format!("serving on {bind}"))?;
    Ok(())
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Prep(f) => run_stage(cli, Stage::Prep, f),
        Command::Index { flags, .. } => run_stage(cli, Stage::Index, flags),
        Command::Candidates { flags, .. } => run_stage(cli, Stage::Candidates, flags),
        Command::Align { flags, .. } => run_stage(cli, Stage::Align, flags),
        Command::Pairs { flags, .. } => run_stage(cli, Stage::Pairs, flags),
        Command::Analyze { flags, .. } => run_stage(cli, Stage::Analyze, flags),
        Command::Normalize {
            text: Some(text), lang, ..
        } => normalize_text(cli, text, lang),
        Command::Normalize { flags, .. } => run_stage(cli, Stage::Normalize, flags),
        Command::Eval(f) => run_stage(cli, Stage::Eval, f),
        Command::SampleGold {
            pairs,
            store,
            stratum,
            cap,
            total,
        } => sample(cli, pairs.as_deref(), store, *stratum, *cap, *total),
        Command::ReviewServe { store, bind, token } => review_serve(cli, store, bind, token.clone()),
    }
}

/// 2 for configuration errors, 3 for missing inputs, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(Error::MissingInput(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
