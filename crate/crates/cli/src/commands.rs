//! Implementations of the pipeline subcommands: argument structs, file IO,
//! and the glue from config to core library calls.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use fcdata_core::augmentor::{self, AugmentBackends, AugmentationReport};
use fcdata_core::config::{PipelineConfig, ROLE_CHECKER, ROLE_GENERATOR, ROLE_REFERENCE};
use fcdata_core::constructor::{self, TriageSetup};
use fcdata_core::corpus::{self, parse_call_array, Buffer, Sample, ToolCall};
use fcdata_core::diversity::{self, DetectParams};
use fcdata_core::gateway::{make_backend, ChatBackend};
use fcdata_core::scoring::{self, OutputMode};
use fcdata_core::semantics::{self, Clustering, EmbeddingBackend};
use fcdata_core::templates::TemplateSet;
use serde::{Deserialize, Serialize};

/// All candidates failed on the backend: the stage made no progress.
#[derive(Debug)]
pub struct BackendExhaustion(pub String);

impl std::fmt::Display for BackendExhaustion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "backend unreachable: {}", self.0)
    }
}

impl std::error::Error for BackendExhaustion {}

pub fn is_backend_exhaustion(cause: &(dyn std::error::Error + 'static)) -> bool {
    cause.downcast_ref::<BackendExhaustion>().is_some()
}

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut config = match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {p:?}"))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = seed {
        config.clustering.seed = seed;
    }
    Ok(config)
}

// ---------------------------------------------------------------------------
// Shared IO helpers
// ---------------------------------------------------------------------------

fn read_buffer(path: &Path) -> Result<Buffer> {
    Buffer::read_jsonl(path).with_context(|| format!("reading corpus {path:?}"))
}

fn guard_not_in_place(input: &Path, output: &Path) -> Result<()> {
    let same = match (input.canonicalize(), output.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => input == output,
    };
    if same {
        bail!("refusing to overwrite input {input:?} in place; pick a different output path");
    }
    Ok(())
}

fn write_buffer(buffer: &Buffer, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    buffer.write_jsonl(path).with_context(|| format!("writing corpus {path:?}"))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing report {path:?}"))?;
    Ok(())
}

fn read_clusters(path: &Path) -> Result<Clustering> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading clusters {path:?}"))?;
    Ok(serde_json::from_str(&text)?)
}

fn cache_path(config: &PipelineConfig) -> Option<PathBuf> {
    config.paths.caches.as_ref().map(|dir| dir.join("embeddings.jsonl"))
}

/// Embed every sample, going through the embedding cache file when one is
/// configured so reruns never re-embed known ids.
fn ensure_embedded(
    config: &PipelineConfig,
    buffer: &Buffer,
    embedder: &dyn EmbeddingBackend,
) -> Result<Buffer> {
    let cache_file = cache_path(config);
    let mut cached = BTreeMap::new();
    if let Some(path) = &cache_file {
        if path.exists() {
            cached = semantics::read_embedding_cache(path)?;
        }
    }
    let warmed = semantics::apply_embedding_cache(buffer, &cached);
    let embedded = semantics::embed_buffer(&warmed, embedder)?;
    if let Some(path) = &cache_file {
        for sample in embedded.iter() {
            if let Some(v) = &sample.embedding {
                cached.insert(sample.id.clone(), v.clone());
            }
        }
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        semantics::write_embedding_cache(path, &cached)?;
    }
    Ok(embedded)
}

fn chat_backend(config: &PipelineConfig, role: &str) -> Result<Box<dyn ChatBackend>> {
    let backend_config = config
        .backend(role)
        .ok_or_else(|| anyhow!("no backend configured for role {role:?}"))?;
    Ok(make_backend(backend_config)?)
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct IngestArgs {
    /// Corpus JSONL to dedup against.
    #[arg(long)]
    buffer: PathBuf,
    /// Incoming queries JSONL.
    #[arg(long)]
    incoming: PathBuf,
    /// Where to write novel candidates (JSONL).
    #[arg(long)]
    out_candidates: PathBuf,
    /// Ingest report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Cosine threshold above which queries count as duplicates.
    #[arg(long)]
    dedup_threshold: Option<f64>,
}

pub fn cmd_ingest(config: &PipelineConfig, args: IngestArgs) -> Result<()> {
    let embedder = config.embedding.build();
    let buffer = ensure_embedded(config, &read_buffer(&args.buffer)?, embedder.as_ref())?;
    let incoming = constructor::read_incoming(&args.incoming)?;
    let threshold = args.dedup_threshold.unwrap_or(config.thresholds.dedup_cosine);
    let total = incoming.len();

    let outcome = constructor::ingest(incoming, &buffer, threshold, embedder.as_ref())?;

    let mut lines = String::new();
    for candidate in &outcome.candidates {
        lines.push_str(&serde_json::to_string(candidate)?);
        lines.push('\n');
    }
    std::fs::write(&args.out_candidates, lines)?;
    if let Some(report) = &args.report {
        write_json(
            report,
            &serde_json::json!({
                "input": total,
                "candidates": outcome.candidates.len(),
                "dropped": outcome.dropped,
            }),
        )?;
    }
    eprintln!(
        "ingest: {} incoming, {} candidates, {} dropped as duplicates",
        total,
        outcome.candidates.len(),
        outcome.dropped.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// construct
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct ConstructArgs {
    /// Corpus JSONL (the buffer being grown).
    #[arg(long)]
    buffer: PathBuf,
    /// Incoming queries JSONL (deduped here before triage).
    #[arg(long)]
    incoming: PathBuf,
    /// Where to write the merged corpus.
    #[arg(long)]
    out: PathBuf,
    /// Annotation export for inconsistent pairs (JSONL).
    #[arg(long)]
    export_path: PathBuf,
    /// Construct report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    dedup_threshold: Option<f64>,
    /// Config role used for reference-call generation.
    #[arg(long, default_value = ROLE_REFERENCE)]
    backend: String,
    /// Merge expert-approved rows from a previous annotation export.
    #[arg(long)]
    import_annotations: Option<PathBuf>,
    /// Parked candidates are appended here for a retry pass (JSONL).
    #[arg(long)]
    parked_path: Option<PathBuf>,
}

pub fn cmd_construct(config: &PipelineConfig, args: ConstructArgs) -> Result<()> {
    guard_not_in_place(&args.buffer, &args.out)?;
    let embedder = config.embedding.build();
    let buffer = ensure_embedded(config, &read_buffer(&args.buffer)?, embedder.as_ref())?;
    let incoming = constructor::read_incoming(&args.incoming)?;
    let threshold = args.dedup_threshold.unwrap_or(config.thresholds.dedup_cosine);
    let total = incoming.len();

    let ingest_outcome = constructor::ingest(incoming, &buffer, threshold, embedder.as_ref())?;
    let chat = chat_backend(config, &args.backend)?;
    let templates = load_templates(config)?;
    let setup = TriageSetup {
        chat: chat.as_ref(),
        embedder: embedder.as_ref(),
        templates: &templates,
        temperature: config.construction.temperature,
        parallelism: config.construction.parallelism,
    };
    let candidate_count = ingest_outcome.candidates.len();
    let triage = constructor::triage(ingest_outcome.candidates, &buffer, &setup)?;

    if candidate_count > 0
        && triage.merged.is_empty()
        && triage.exported.is_empty()
        && !triage.parked.is_empty()
    {
        let reason = triage.parked[0].reason.clone();
        return Err(BackendExhaustion(reason).into());
    }

    let mut imported = 0usize;
    let mut import_rejected = 0usize;
    let mut delta: Vec<Sample> = triage.merged.clone();
    if let Some(path) = &args.import_annotations {
        let outcome = constructor::import_annotations_file(path)?;
        imported = outcome.samples.len();
        import_rejected = outcome.rejected.len();
        for row in &outcome.rejected {
            log::warn!("annotation import rejected line {}: {}", row.line, row.reason);
        }
        delta.extend(outcome.samples);
    }

    let merged = corpus::merge(&buffer, &Buffer::from_samples(delta));
    write_buffer(&merged, &args.out)?;
    constructor::write_annotations(&args.export_path, &triage.exported)?;
    if let Some(path) = &args.parked_path {
        let mut lines = String::new();
        for parked in &triage.parked {
            lines.push_str(&serde_json::to_string(parked)?);
            lines.push('\n');
        }
        std::fs::write(path, lines)?;
    }
    if let Some(report) = &args.report {
        write_json(
            report,
            &serde_json::json!({
                "input": total,
                "dropped_duplicates": ingest_outcome.dropped.len(),
                "candidates": candidate_count,
                "merged": triage.merged.len(),
                "exported": triage.exported.len(),
                "parked": triage.parked.len(),
                "imported_annotations": imported,
                "import_rejected": import_rejected,
                "corpus_before": buffer.len(),
                "corpus_after": merged.len(),
                "outcomes": triage.outcomes,
            }),
        )?;
    }
    eprintln!(
        "construct: {total} incoming -> {} dup, {} merged, {} exported, {} parked; corpus {} -> {}",
        ingest_outcome.dropped.len(),
        triage.merged.len(),
        triage.exported.len(),
        triage.parked.len(),
        buffer.len(),
        merged.len()
    );
    Ok(())
}

fn load_templates(config: &PipelineConfig) -> Result<TemplateSet> {
    match &config.paths.templates {
        Some(dir) => Ok(TemplateSet::load_dir(dir)?),
        None => Ok(TemplateSet::builtin()),
    }
}

// ---------------------------------------------------------------------------
// cluster
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct ClusterArgs {
    #[arg(long)]
    buffer: PathBuf,
    /// Where to write the clustering (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Cluster count; defaults to the config or the sqrt(n/2) heuristic.
    #[arg(long)]
    k: Option<usize>,
}

pub fn cmd_cluster(config: &PipelineConfig, args: ClusterArgs) -> Result<()> {
    let embedder = config.embedding.build();
    let buffer = ensure_embedded(config, &read_buffer(&args.buffer)?, embedder.as_ref())?;
    if buffer.is_empty() {
        bail!("cannot cluster an empty corpus");
    }
    let k = args
        .k
        .or(config.clustering.k)
        .unwrap_or_else(|| semantics::auto_cluster_count(buffer.len()));
    let clustering = semantics::cluster_buffer(&buffer, k, config.clustering.seed)?;
    write_json(&args.out, &clustering)?;
    eprintln!("cluster: {} samples into k={} (seed {})", buffer.len(), k, config.clustering.seed);
    Ok(())
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct DetectArgs {
    #[arg(long)]
    buffer: PathBuf,
    /// Clustering JSON from `cluster`.
    #[arg(long)]
    clusters: PathBuf,
    /// Blind-spot report (JSON array).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    tau_g: Option<f64>,
    #[arg(long)]
    tau_b: Option<f64>,
    #[arg(long)]
    min_support: Option<u64>,
}

fn detect_params_from(config: &PipelineConfig, tau_g: Option<f64>, tau_b: Option<f64>, min_support: Option<u64>) -> Result<DetectParams> {
    let params = DetectParams {
        tau_g: tau_g.unwrap_or(config.thresholds.tau_g),
        tau_b: tau_b.unwrap_or(config.thresholds.tau_b),
        min_support: min_support.unwrap_or(config.thresholds.min_support),
    };
    if params.tau_g <= 0.0 {
        bail!("tau_g must be positive");
    }
    if !(params.tau_b > 0.0 && params.tau_b < 1.0) {
        bail!("tau_b must be in (0, 1)");
    }
    Ok(params)
}

pub fn cmd_detect(config: &PipelineConfig, args: DetectArgs) -> Result<()> {
    let buffer = read_buffer(&args.buffer)?;
    let clustering = read_clusters(&args.clusters)?;
    let params = detect_params_from(config, args.tau_g, args.tau_b, args.min_support)?;
    let spots = diversity::detect_blind_spots(&buffer, &clustering, &params);
    write_json(&args.out, &spots)?;
    eprintln!(
        "detect: {} blind spots at tau_g={} tau_b={} min_support={}",
        spots.len(),
        params.tau_g,
        params.tau_b,
        params.min_support
    );
    for spot in &spots {
        eprintln!(
            "  {} cluster {}: H_G={:.4} H_k={:.4} ratio={:.4} support={}",
            spot.param_path(),
            spot.cluster,
            spot.h_global,
            spot.h_cluster,
            spot.ratio,
            spot.support
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct AugmentArgs {
    #[arg(long)]
    buffer: PathBuf,
    #[arg(long)]
    clusters: PathBuf,
    /// Merged corpus output (input corpus + accepted samples).
    #[arg(long)]
    out_corpus: PathBuf,
    /// Per-spot augmentation reports (JSON array).
    #[arg(long)]
    out_reports: PathBuf,
    /// Blind-spot report to repair; detected fresh when omitted.
    #[arg(long)]
    spots: Option<PathBuf>,
    #[arg(long)]
    max_rounds: Option<usize>,
    #[arg(long)]
    candidates_per_round: Option<usize>,
    /// Representative queries per prompt.
    #[arg(long)]
    reps: Option<usize>,
    /// Config role for the generation model.
    #[arg(long, default_value = ROLE_GENERATOR)]
    generator_backend: String,
    /// Config role for the consistency checker.
    #[arg(long, default_value = ROLE_CHECKER)]
    checker_backend: String,
    #[arg(long)]
    tau_g: Option<f64>,
    #[arg(long)]
    tau_b: Option<f64>,
    #[arg(long)]
    min_support: Option<u64>,
    /// Candidates parked on checker failure go here for a retry pass;
    /// defaults to `<out-reports>.parked.jsonl` when any exist.
    #[arg(long)]
    parked_path: Option<PathBuf>,
}

pub fn cmd_augment(config: &PipelineConfig, args: AugmentArgs) -> Result<()> {
    guard_not_in_place(&args.buffer, &args.out_corpus)?;
    let embedder = config.embedding.build();
    let buffer = ensure_embedded(config, &read_buffer(&args.buffer)?, embedder.as_ref())?;
    let clustering = read_clusters(&args.clusters)?;
    let params = detect_params_from(config, args.tau_g, args.tau_b, args.min_support)?;

    let spots: Vec<diversity::BlindSpot> = match &args.spots {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)?
        }
        None => diversity::detect_blind_spots(&buffer, &clustering, &params),
    };

    let generator = chat_backend(config, &args.generator_backend)?;
    let checker = chat_backend(config, &args.checker_backend)?;
    let templates = load_templates(config)?;
    let mut augment_config = config.augment_config();
    augment_config.tau_b = params.tau_b;
    if let Some(v) = args.max_rounds {
        augment_config.max_rounds = v;
    }
    if let Some(v) = args.candidates_per_round {
        augment_config.candidates_per_round = v;
    }
    if let Some(v) = args.reps {
        augment_config.reps = v;
    }

    let mut reports: Vec<AugmentationReport> = Vec::new();
    let mut parked_rows = String::new();
    let mut parked_count = 0usize;
    for spot in &spots {
        let mut repair = augmentor::BlindSpotRepair::new(
            spot.clone(),
            &buffer,
            &clustering,
            AugmentBackends {
                generator: generator.as_ref(),
                checker: checker.as_ref(),
                embedder: embedder.as_ref(),
            },
            &templates,
            augment_config,
        )?;
        for _ in 0..augment_config.max_rounds {
            if repair.resolved() {
                break;
            }
            if let Err(e) = repair.run_round() {
                log::warn!("round failed for {}: {e}", spot.param_path());
            }
        }
        for (candidate, reason) in repair.parked() {
            parked_count += 1;
            parked_rows.push_str(&serde_json::to_string(&serde_json::json!({
                "spot": spot.param_path(),
                "cluster": spot.cluster,
                "candidate": candidate,
                "reason": reason,
            }))?);
            parked_rows.push('\n');
        }
        let report = repair.into_report();
        eprintln!(
            "augment: {} cluster {} -> {} rounds, {} new samples, resolved={}",
            spot.param_path(),
            spot.cluster,
            report.rounds.len(),
            report.new_samples.len(),
            report.resolved
        );
        reports.push(report);
    }

    let merged = augmentor::assemble(&buffer, &reports, embedder.as_ref(), config.thresholds.dedup_cosine)?;
    write_buffer(&merged, &args.out_corpus)?;
    write_json(&args.out_reports, &reports)?;
    if parked_count > 0 {
        let path = args.parked_path.clone().unwrap_or_else(|| {
            let mut p = args.out_reports.as_os_str().to_owned();
            p.push(".parked.jsonl");
            PathBuf::from(p)
        });
        std::fs::write(&path, parked_rows)?;
        eprintln!("augment: {parked_count} candidates parked for retry in {path:?}");
    }
    eprintln!(
        "augment: {} spots, {} resolved; corpus {} -> {}",
        reports.len(),
        reports.iter().filter(|r| r.resolved).count(),
        buffer.len(),
        merged.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// assemble
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct AssembleArgs {
    #[arg(long)]
    buffer: PathBuf,
    /// Augmentation report files (JSON arrays); merged at one barrier.
    #[arg(long)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dedup_threshold: Option<f64>,
}

pub fn cmd_assemble(config: &PipelineConfig, args: AssembleArgs) -> Result<()> {
    guard_not_in_place(&args.buffer, &args.out)?;
    let buffer = read_buffer(&args.buffer)?;
    let mut reports: Vec<AugmentationReport> = Vec::new();
    for path in &args.reports {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading report {path:?}"))?;
        let mut batch: Vec<AugmentationReport> = serde_json::from_str(&text)?;
        reports.append(&mut batch);
    }
    let embedder = config.embedding.build();
    let threshold = args.dedup_threshold.unwrap_or(config.thresholds.dedup_cosine);
    let merged = augmentor::assemble(&buffer, &reports, embedder.as_ref(), threshold)?;
    write_buffer(&merged, &args.out)?;
    eprintln!(
        "assemble: {} reports; corpus {} -> {}",
        reports.len(),
        buffer.len(),
        merged.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct ScoreArgs {
    /// JSONL of {raw, mode, reference}.
    #[arg(long)]
    input: PathBuf,
    /// JSONL of reward breakdowns, aligned with the input.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Deserialize)]
struct ScoreRow {
    raw: String,
    mode: OutputMode,
    reference: Vec<ToolCall>,
}

pub fn cmd_score(_config: &PipelineConfig, args: ScoreArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.input)?;
    let mut out = String::new();
    let mut count = 0usize;
    let mut total = 0.0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: ScoreRow =
            serde_json::from_str(line).with_context(|| format!("score input line {}", i + 1))?;
        let breakdown = scoring::reward(&row.raw, row.mode, &row.reference);
        total += breakdown.total;
        count += 1;
        out.push_str(&serde_json::to_string(&breakdown)?);
        out.push('\n');
    }
    std::fs::write(&args.out, out)?;
    let mean = if count > 0 { total / count as f64 } else { 0.0 };
    eprintln!("score: {count} rows, mean total reward {mean:.4}");
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct EvaluateArgs {
    /// Predictions JSONL: each line a call array or a corpus sample record.
    #[arg(long)]
    predictions: PathBuf,
    /// References JSONL, same shapes accepted.
    #[arg(long)]
    references: PathBuf,
    /// Evaluation report (JSON).
    #[arg(long)]
    out: PathBuf,
}

/// A line is either a bare JSON array of calls or an object with an
/// `answers` field (so corpus files work directly as references).
fn parse_call_lines(text: &str, what: &str) -> Result<Vec<Vec<ToolCall>>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .with_context(|| format!("{what} line {}", i + 1))?;
        let calls = match &value {
            serde_json::Value::Array(_) => parse_call_array(&value, "line")?,
            serde_json::Value::Object(map) => {
                let answers = map
                    .get("answers")
                    .or_else(|| map.get("calls"))
                    .ok_or_else(|| anyhow!("{what} line {}: no answers field", i + 1))?;
                let answers = match answers {
                    serde_json::Value::String(inner) => serde_json::from_str(inner)?,
                    other => other.clone(),
                };
                parse_call_array(&answers, "answers")?
            }
            _ => bail!("{what} line {}: expected array or object", i + 1),
        };
        out.push(calls);
    }
    Ok(out)
}

pub fn cmd_evaluate(_config: &PipelineConfig, args: EvaluateArgs) -> Result<()> {
    let predictions = parse_call_lines(&std::fs::read_to_string(&args.predictions)?, "predictions")?;
    let references = parse_call_lines(&std::fs::read_to_string(&args.references)?, "references")?;
    let report = scoring::selection_f1(&predictions, &references)?;
    write_json(&args.out, &report)?;
    eprintln!("evaluate: {} pairs, macro F1 {:.4}", predictions.len(), report.macro_f1);
    for metrics in &report.per_class {
        if metrics.support > 0 {
            eprintln!(
                "  {}: support {} precision {:.4} recall {:.4} f1 {:.4}",
                metrics.class, metrics.support, metrics.precision, metrics.recall, metrics.f1
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// export-sft
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SftMode {
    Reasoning,
    Direct,
    Both,
}

#[derive(Args)]
pub struct ExportSftArgs {
    #[arg(long)]
    buffer: PathBuf,
    #[arg(long, value_enum)]
    mode: SftMode,
    /// Training records JSONL of {system, user, target}.
    #[arg(long)]
    out: PathBuf,
    /// Plans sidecar JSONL of {id, plan} for reasoning records.
    #[arg(long)]
    plans: Option<PathBuf>,
    /// Fail instead of skipping reasoning records without a plan.
    #[arg(long)]
    strict_plans: bool,
}

#[derive(Deserialize)]
struct PlanRow {
    id: String,
    plan: String,
}

pub fn cmd_export_sft(_config: &PipelineConfig, args: ExportSftArgs) -> Result<()> {
    let buffer = read_buffer(&args.buffer)?;
    let mut plans: BTreeMap<String, String> = BTreeMap::new();
    if let Some(path) = &args.plans {
        for (i, line) in std::fs::read_to_string(path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: PlanRow =
                serde_json::from_str(line).with_context(|| format!("plans line {}", i + 1))?;
            plans.insert(row.id, row.plan);
        }
    }

    let modes: &[OutputMode] = match args.mode {
        SftMode::Reasoning => &[OutputMode::Reasoning],
        SftMode::Direct => &[OutputMode::Direct],
        SftMode::Both => &[OutputMode::Reasoning, OutputMode::Direct],
    };

    let mut out = String::new();
    let mut written = 0usize;
    let mut skipped = 0usize;
    for sample in buffer.iter() {
        for mode in modes {
            let plan = plans.get(&sample.id).map(String::as_str);
            if *mode == OutputMode::Reasoning && plan.is_none() {
                if args.strict_plans {
                    bail!("sample {} has no plan and --strict-plans is set", sample.id);
                }
                skipped += 1;
                log::warn!("skipping reasoning record for {}: no plan", sample.id);
                continue;
            }
            let record = scoring::assemble_sft_record(sample, *mode, plan)?;
            out.push_str(&record.to_json());
            out.push('\n');
            written += 1;
        }
    }
    std::fs::write(&args.out, out)?;
    eprintln!("export-sft: {written} records written, {skipped} reasoning records skipped");
    Ok(())
}

// ---------------------------------------------------------------------------
// grid
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct GridArgs {
    #[arg(long)]
    buffer: PathBuf,
    #[arg(long)]
    clusters: PathBuf,
    /// Grid report (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated tau_g sweep values.
    #[arg(long, default_value = "1.0,1.5,2.0,2.5,3.0")]
    tau_g_values: String,
    /// Comma-separated tau_b sweep values.
    #[arg(long, default_value = "0.05,0.1,0.15,0.2,0.25")]
    tau_b_values: String,
    #[arg(long)]
    min_support: Option<u64>,
}

fn parse_sweep(text: &str, name: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("{name} value {s:?}: {e}")))
        .collect()
}

pub fn cmd_grid(config: &PipelineConfig, args: GridArgs) -> Result<()> {
    let buffer = read_buffer(&args.buffer)?;
    let clustering = read_clusters(&args.clusters)?;
    let tau_g_values = parse_sweep(&args.tau_g_values, "tau_g")?;
    let tau_b_values = parse_sweep(&args.tau_b_values, "tau_b")?;
    let min_support = args.min_support.unwrap_or(config.thresholds.min_support);

    let mut cells = Vec::new();
    for &tau_g in &tau_g_values {
        for &tau_b in &tau_b_values {
            let params = DetectParams { tau_g, tau_b, min_support };
            if params.tau_g <= 0.0 || !(params.tau_b > 0.0 && params.tau_b < 1.0) {
                bail!("sweep value out of range: tau_g={tau_g} tau_b={tau_b}");
            }
            let count = diversity::blind_spot_count(&buffer, &clustering, &params);
            cells.push(serde_json::json!({
                "tau_g": tau_g,
                "tau_b": tau_b,
                "blind_spots": count,
            }));
        }
    }
    write_json(&args.out, &serde_json::json!({ "min_support": min_support, "cells": cells }))?;
    eprintln!("grid: {} cells over {} x {} sweep", cells.len(), tau_g_values.len(), tau_b_values.len());
    Ok(())
}
