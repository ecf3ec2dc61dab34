use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use exploit2cve::backend::BackendSpec;
use exploit2cve::pipeline::{self, PipelineConfig};
use exploit2cve::{Error, Result};
use serde::Serialize;

/// Compose CVE descriptions from exploit posts and score them.
#[derive(Parser)]
#[command(name = "exploit2cve", version)]
struct Cli {
    #[command(flatten)]
    opts: Opts,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Opts {
    /// TOML pipeline config; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory of <edb_id>.txt posts or a posts.jsonl file.
    #[arg(long, global = true)]
    posts: Option<PathBuf>,
    #[arg(long, global = true)]
    cves: Option<PathBuf>,
    #[arg(long, global = true)]
    cpe: Option<PathBuf>,
    /// rule | stub:<fixture.json> | external:<command or tcp://host:port>
    #[arg(long, global = true)]
    backend_ner: Option<BackendSpec>,
    #[arg(long, global = true)]
    backend_qa: Option<BackendSpec>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Exit with status 3 instead of falling back to the rule backend.
    #[arg(long, global = true)]
    no_fallback: bool,
    /// Hand labels (JSONL) for NER and QA metrics.
    #[arg(long, global = true)]
    gold: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse posts and CVEs, link them: posts.jsonl, links.jsonl.
    Ingest,
    /// Extract aspects from posts.jsonl: aspects.jsonl.
    Extract,
    /// Fill templates from aspects.jsonl: composed.jsonl.
    Compose,
    /// Score composed.jsonl against reference CVEs: report.json.
    Evaluate,
    /// All four stages in order.
    Run,
    /// Timing, missing-CVE and severity tables: stats.json.
    Stats {
        /// Also write gaps.csv.
        #[arg(long)]
        csv: bool,
        /// Reference date for post ages (default: newest post).
        #[arg(long)]
        as_of: Option<NaiveDate>,
    },
    /// Draw extracted instances for manual review: sample.jsonl.
    Sample {
        #[arg(short, long, default_value_t = 384)]
        n: usize,
    },
}

fn config(opts: Opts) -> Result<PipelineConfig> {
    let mut cfg = match &opts.config {
        Some(path) => PipelineConfig::load(path)?,
        None => {
            let posts = opts
                .posts
                .clone()
                .ok_or_else(|| Error::Validation("--posts or --config is required".into()))?;
            PipelineConfig::new(posts, opts.out.clone().unwrap_or_else(|| "out".into()))
        }
    };
    if let Some(p) = opts.posts {
        cfg.posts = p;
    }
    if opts.cves.is_some() {
        cfg.cves = opts.cves;
    }
    if opts.cpe.is_some() {
        cfg.cpe = opts.cpe;
    }
    if let Some(b) = opts.backend_ner {
        cfg.ner_backend = b;
    }
    if let Some(b) = opts.backend_qa {
        cfg.qa_backend = b;
    }
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(o) = opts.out {
        cfg.out = o;
    }
    if opts.gold.is_some() {
        cfg.gold = opts.gold;
    }
    cfg.no_fallback |= opts.no_fallback;
    Ok(cfg)
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // reader went away, e.g. piped into head
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = config(cli.opts)?;
    match cli.command {
        Cmd::Ingest => {
            cfg.validate()?;
            let i = pipeline::ingest(&cfg)?;
            eprintln!(
                "{} posts, {} CVEs, {} links",
                i.posts.len(),
                i.cves.len(),
                i.links.len()
            );
        }
        Cmd::Extract => {
            let e = pipeline::run_extract_stage(&cfg)?;
            eprintln!(
                "{} posts extracted, {} fallbacks",
                e.aspects.len(),
                e.fallbacks.len()
            );
        }
        Cmd::Compose => {
            let c = pipeline::run_compose_stage(&cfg)?;
            eprintln!("{} descriptions composed", c.len());
        }
        Cmd::Evaluate => print(&pipeline::run_evaluate_stage(&cfg)?)?,
        Cmd::Run => print(&pipeline::run_pipeline(&cfg)?)?,
        Cmd::Stats { csv, as_of } => {
            if as_of.is_some() {
                cfg.as_of = as_of;
            }
            print(&pipeline::run_stats(&cfg, csv)?)?;
        }
        Cmd::Sample { n } => {
            let s = pipeline::run_sample(&cfg, n)?;
            eprintln!("{} instances sampled with seed {}", s.len(), cfg.seed);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
