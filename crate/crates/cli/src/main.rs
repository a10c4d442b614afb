//! The `realign` binary: pipeline stages and utilities as subcommands.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use realign_core::corpus::{load_dataset_lenient, save_dataset, Dataset};
use realign_core::evalsuite;
use realign_core::gateway::{Gateway, GatewayConfig, HttpTransport, ReplayCache};
use realign_core::pipeline::{run_realign, PipelineOptions, RecordError};
use realign_core::postprocess::{apply_filters, FilterConfig};
use realign_core::reformat::{
    build_explanation_prompt, parse_explanation_output, ExplanationKind, RewriteMode,
};
use realign_core::taxonomy::CriteriaRegistry;
use realign_core::{CompletionService, DecodingParams};

/// Exit code for runs that completed but degraded some records.
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "realign",
    version,
    about = "Reformat instruction-dataset responses to per-task format criteria"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Adaptive,
    Forced,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum JudgeMode {
    Readability,
    Factuality,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExplainKind {
    Gsm8k,
    Math,
}

/// Flags shared by every subcommand that talks to the gateway.
#[derive(Args)]
struct GatewayArgs {
    /// Replay cache directory (record on miss, serve on hit)
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Serve from the cache only; any miss is an error
    #[arg(long, default_value_t = false)]
    sealed: bool,
    /// Gateway config file (model id, URLs, retries, pacing)
    #[arg(long)]
    config: Option<PathBuf>,
}

impl GatewayArgs {
    fn build(&self) -> Result<Gateway> {
        let config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => GatewayConfig::default(),
        };
        if self.sealed {
            let dir = self
                .cache_dir
                .as_ref()
                .context("--sealed requires --cache-dir")?;
            return Ok(Gateway::sealed(config, dir)?);
        }
        let cache = match &self.cache_dir {
            Some(dir) => Some(ReplayCache::open(dir.clone())?),
            None => None,
        };
        let transport = HttpTransport::new(config.clone());
        Ok(Gateway::new(config, cache, Some(Box::new(transport))))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Classify each record's query into one of the 46 tasks
    Classify {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        criteria: PathBuf,
        #[command(flatten)]
        gateway: GatewayArgs,
    },
    /// Run the full pipeline: classify, retrieve, rewrite, filter
    Realign {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        criteria: PathBuf,
        #[arg(long, value_enum, default_value = "adaptive")]
        mode: ModeArg,
        /// Disable evidence retrieval for knowledge-intensive tasks
        #[arg(long, default_value_t = false)]
        no_retrieval: bool,
        /// Evidence snippets per query
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Filter config file; defaults are built in
        #[arg(long)]
        filters: Option<PathBuf>,
        /// Per-record outcome log (JSON lines)
        #[arg(long)]
        outcomes: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[command(flatten)]
        gateway: GatewayArgs,
    },
    /// Re-run the post-processing filters over candidate rewrites
    Filter {
        /// Original dataset
        #[arg(long = "in")]
        input: PathBuf,
        /// Candidate rewrites (same ids, task field set)
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        criteria: PathBuf,
        #[arg(long)]
        filters: Option<PathBuf>,
    },
    /// Edit-rate and length report over an original/realigned pair
    Stats {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        realigned: PathBuf,
        /// Report file; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mix k% realigned responses into the original dataset
    SampleMix {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        realigned: PathBuf,
        #[arg(long)]
        k: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against gold answers by last-number match
    EvalMath {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Judge response pairs for readability or answers for factuality
    Judge {
        #[arg(long, value_enum)]
        mode: JudgeMode,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        gateway: GatewayArgs,
    },
    /// Generate step-by-step explanations for math gold answers
    Explain {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        kind: ExplainKind,
        #[command(flatten)]
        gateway: GatewayArgs,
    },
}

fn load(path: &Path) -> Result<Dataset> {
    let (dataset, line_errors) =
        load_dataset_lenient(path).with_context(|| format!("loading {}", path.display()))?;
    for err in &line_errors {
        log::warn!("{}: {err}", path.display());
    }
    Ok(dataset)
}

fn load_filters(path: &Option<PathBuf>) -> Result<FilterConfig> {
    match path {
        Some(p) => FilterConfig::load(p)
            .map_err(|e| anyhow::anyhow!("loading filter config {}: {e}", p.display())),
        None => Ok(FilterConfig::default()),
    }
}

fn write_report(out: &Option<PathBuf>, report: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row)?);
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn report_errors(errors: &[RecordError]) -> bool {
    for err in errors {
        log::error!("record {} failed at {}: {}", err.record_id, err.stage, err.message);
    }
    !errors.is_empty()
}

fn cmd_classify(
    input: &Path,
    out: &Path,
    criteria: &Path,
    gateway: &GatewayArgs,
) -> Result<bool> {
    let registry = CriteriaRegistry::load(criteria)?;
    let gateway = gateway.build()?;
    let mut dataset = load(input)?;
    let mut failures = Vec::new();
    for record in &mut dataset.records {
        match registry.classify(&record.query, &gateway) {
            Ok(label) => record.task = Some(label.name),
            Err(e) => failures.push(RecordError {
                record_id: record.id.clone(),
                stage: "classify".to_string(),
                message: e.to_string(),
            }),
        }
    }
    save_dataset(&dataset, out)?;
    Ok(report_errors(&failures))
}

#[allow(clippy::too_many_arguments)]
fn cmd_realign(
    input: &Path,
    out: &Path,
    criteria: &Path,
    mode: ModeArg,
    no_retrieval: bool,
    k: usize,
    filters: &Option<PathBuf>,
    outcomes: &Option<PathBuf>,
    workers: usize,
    gateway: &GatewayArgs,
) -> Result<bool> {
    if k == 0 {
        bail!("--k must be at least 1");
    }
    let registry = CriteriaRegistry::load(criteria)?;
    for warning in registry.warnings() {
        log::warn!("{warning}");
    }
    let filter_config = load_filters(filters)?;
    let gateway = gateway.build()?;
    let dataset = load(input)?;
    let options = PipelineOptions {
        mode: match mode {
            ModeArg::Adaptive => RewriteMode::Adaptive,
            ModeArg::Forced => RewriteMode::Forced,
        },
        retrieval_enabled: !no_retrieval,
        k_evidence: k,
        params: DecodingParams::default(),
        workers: workers.max(1),
    };
    let run = run_realign(
        &dataset,
        &registry,
        &gateway,
        Some(&gateway),
        &filter_config,
        &options,
    );
    save_dataset(&run.dataset, out)?;
    if let Some(path) = outcomes {
        write_json_lines(path, &run.outcomes)?;
    }
    Ok(report_errors(&run.errors))
}

fn cmd_filter(
    input: &Path,
    candidates: &Path,
    out: &Path,
    criteria: &Path,
    filters: &Option<PathBuf>,
) -> Result<bool> {
    let registry = CriteriaRegistry::load(criteria)?;
    let filter_config = load_filters(filters)?;
    let original = load(input)?;
    let mut candidate_set = load(candidates)?;
    if original.records.len() != candidate_set.records.len() {
        bail!(
            "record count mismatch: {} original vs {} candidates",
            original.records.len(),
            candidate_set.records.len()
        );
    }
    let mut failures = Vec::new();
    for (orig, cand) in original.records.iter().zip(&mut candidate_set.records) {
        if orig.id != cand.id {
            bail!("id mismatch: '{}' vs '{}'", orig.id, cand.id);
        }
        let task_name = cand.task.as_deref().or(orig.task.as_deref());
        let Some(task) = task_name.and_then(|t| registry.get(t)) else {
            failures.push(RecordError {
                record_id: cand.id.clone(),
                stage: "filter".to_string(),
                message: format!("unknown or missing task '{}'", task_name.unwrap_or("")),
            });
            cand.response = orig.response.clone();
            continue;
        };
        let (final_text, _) = apply_filters(
            &orig.query,
            &orig.response,
            &cand.response,
            task,
            &filter_config,
        );
        cand.response = final_text;
    }
    save_dataset(&candidate_set, out)?;
    Ok(report_errors(&failures))
}

fn cmd_stats(original: &Path, realigned: &Path, out: &Option<PathBuf>) -> Result<()> {
    let original = load(original)?;
    let realigned = load(realigned)?;
    let report = realign_core::analytics::dataset_report(&original, &realigned)?;

    #[derive(Serialize)]
    struct StatsReport {
        n_records: usize,
        /// Whitespace word counts stand in for tokens.
        avg_response_words: f64,
        realign_pct: f64,
    }
    write_report(
        out,
        &StatsReport {
            n_records: report.n_records,
            avg_response_words: report.avg_response_words,
            realign_pct: report.realign_pct,
        },
    )
}

fn cmd_sample_mix(
    original: &Path,
    realigned: &Path,
    k: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let original = load(original)?;
    let realigned = load(realigned)?;
    let mixed = realign_core::analytics::sample_mix(&realigned, &original, k, seed)?;
    save_dataset(&mixed, out)?;
    Ok(())
}

fn cmd_eval_math(pred: &Path, gold: &Path, out: &Option<PathBuf>) -> Result<()> {
    let pred = load(pred)?;
    let gold = load(gold)?;
    let score = evalsuite::score_math(&pred, &gold)?;
    write_report(out, &score)
}

/// One judging item. Readability needs `response_a`/`response_b`;
/// factuality needs `reference` and `answer`.
#[derive(Deserialize)]
struct JudgeItem {
    id: String,
    question: String,
    #[serde(default)]
    response_a: Option<String>,
    #[serde(default)]
    response_b: Option<String>,
    #[serde(default)]
    reference: Option<String>,
    #[serde(default)]
    answer: Option<String>,
}

#[derive(Serialize)]
struct JudgeRow {
    id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    verdict: Option<evalsuite::JudgeVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn cmd_judge(
    mode: JudgeMode,
    input: &Path,
    seed: u64,
    out: &Option<PathBuf>,
    gateway: &GatewayArgs,
) -> Result<bool> {
    let gateway = gateway.build()?;
    let text =
        std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let mut rows = Vec::new();
    let mut failed = false;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: JudgeItem = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: malformed judge item", input.display(), i + 1))?;
        let result = match mode {
            JudgeMode::Readability => {
                let (Some(a), Some(b)) = (&item.response_a, &item.response_b) else {
                    bail!("{}: readability item needs response_a and response_b", item.id);
                };
                // Per-item seed so position randomization varies across items.
                evalsuite::judge_pairwise(
                    &item.question,
                    a,
                    b,
                    &gateway,
                    seed.wrapping_add(i as u64),
                )
            }
            JudgeMode::Factuality => {
                let (Some(reference), Some(answer)) = (&item.reference, &item.answer) else {
                    bail!("{}: factuality item needs reference and answer", item.id);
                };
                evalsuite::judge_factuality(&item.question, reference, answer, &gateway)
            }
        };
        rows.push(match result {
            Ok(verdict) => JudgeRow {
                id: item.id,
                verdict: Some(verdict),
                error: None,
            },
            Err(e) => {
                failed = true;
                log::error!("judging {} failed: {e}", item.id);
                JudgeRow {
                    id: item.id,
                    verdict: None,
                    error: Some(e.to_string()),
                }
            }
        });
    }
    match out {
        Some(path) => write_json_lines(path, &rows)?,
        None => {
            for row in &rows {
                println!("{}", serde_json::to_string(row)?);
            }
        }
    }
    Ok(failed)
}

fn cmd_explain(
    input: &Path,
    out: &Path,
    kind: ExplainKind,
    gateway: &GatewayArgs,
) -> Result<bool> {
    let gateway = gateway.build()?;
    let kind = match kind {
        ExplainKind::Gsm8k => ExplanationKind::Gsm8k,
        ExplainKind::Math => ExplanationKind::Math,
    };
    let mut dataset = load(input)?;
    let mut failures = Vec::new();
    for record in &mut dataset.records {
        let prompt = match build_explanation_prompt(record, kind) {
            Ok(p) => p,
            Err(e) => {
                failures.push(RecordError {
                    record_id: record.id.clone(),
                    stage: "explain".to_string(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        let candidates = match gateway.complete(&prompt.system, &prompt.user, &prompt.params) {
            Ok(c) => c,
            Err(e) => {
                failures.push(RecordError {
                    record_id: record.id.clone(),
                    stage: "explain".to_string(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        match candidates.iter().find_map(|c| parse_explanation_output(c)) {
            Some(explanation) => record.response = explanation,
            None => failures.push(RecordError {
                record_id: record.id.clone(),
                stage: "explain".to_string(),
                message: "no candidate contained an explanation marker".to_string(),
            }),
        }
    }
    save_dataset(&dataset, out)?;
    Ok(report_errors(&failures))
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Classify {
            input,
            out,
            criteria,
            gateway,
        } => cmd_classify(input, out, criteria, gateway),
        Command::Realign {
            input,
            out,
            criteria,
            mode,
            no_retrieval,
            k,
            filters,
            outcomes,
            workers,
            gateway,
        } => cmd_realign(
            input,
            out,
            criteria,
            *mode,
            *no_retrieval,
            *k,
            filters,
            outcomes,
            *workers,
            gateway,
        ),
        Command::Filter {
            input,
            candidates,
            out,
            criteria,
            filters,
        } => cmd_filter(input, candidates, out, criteria, filters),
        Command::Stats {
            original,
            realigned,
            out,
        } => cmd_stats(original, realigned, out).map(|()| false),
        Command::SampleMix {
            original,
            realigned,
            k,
            seed,
            out,
        } => cmd_sample_mix(original, realigned, *k, *seed, out).map(|()| false),
        Command::EvalMath { pred, gold, out } => cmd_eval_math(pred, gold, out).map(|()| false),
        Command::Judge {
            mode,
            input,
            seed,
            out,
            gateway,
        } => cmd_judge(*mode, input, *seed, out, gateway),
        Command::Explain {
            input,
            out,
            kind,
            gateway,
        } => cmd_explain(input, out, *kind, gateway),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(EXIT_PARTIAL),
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
