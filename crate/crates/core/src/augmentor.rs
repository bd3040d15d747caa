//! Multi-round distribution-aware augmentation of blind spots: prompt
//! rendering with live entropy state, response parsing, gated candidate
//! validation, acceptance only on diversity improvement, and final
//! dedup/merge into the corpus.
//!
//! Rounds within one blind spot are strictly sequential (each depends on the
//! previous round's entropy state); distinct blind spots can be repaired in
//! parallel against snapshots and assembled at one barrier.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    self, canonical_json, extract_first_json_array, Buffer, CorpusError, Origin, Sample,
    ScalarValue, ToolCall, ToolSpec,
};
use crate::diversity::{entropy, value_histogram, BlindSpot, Scope, ValueHistogram};
use crate::gateway::{ChatBackend, ChatRequest, GatewayError};
use crate::semantics::{
    self, Clustering, EmbeddingBackend, SemanticsError,
};
use crate::templates::{render, TemplateError, TemplateSet};

#[derive(Debug, thiserror::Error)]
pub enum AugmentorError {
    #[error("no JSON array found in generator response")]
    NoJsonFound,
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("backend error: {0}")]
    Backend(#[from] GatewayError),
    #[error("consistency checker unavailable: {0}")]
    CheckerUnavailable(String),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Diversity(#[from] crate::diversity::DiversityError),
    #[error("cluster {0} has no members carrying the blind-spot parameter")]
    NoClusterMembers(usize),
}

/// One generated repair candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugCandidate {
    pub new_query: String,
    pub new_value: String,
    pub new_tool_call: Vec<ToolCall>,
    pub step_rationale: String,
    pub round: usize,
}

/// Entropy bookkeeping for one generation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round: usize,
    pub h_global_before: f64,
    pub h_global_after: f64,
    pub h_cluster_before: f64,
    pub h_cluster_after: f64,
    pub ratio_before: f64,
    pub ratio_after: f64,
    pub accepted: usize,
    pub rejected: usize,
    /// Normalized target-parameter values produced this round.
    pub generated_values: BTreeSet<String>,
}

/// Outcome of repairing one blind spot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentationReport {
    pub blind_spot: BlindSpot,
    pub rounds: Vec<RoundState>,
    /// Final entropy ratio reached tau_b.
    pub resolved: bool,
    pub new_samples: Vec<Sample>,
}

/// Why a candidate was rejected (parked candidates are errors, not
/// rejections).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RejectReason {
    Schema(String),
    TargetValueMismatch,
    NoDiversityGain,
    Stability(String),
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Accepted,
    Rejected(RejectReason),
}

/// Knobs for the repair loop.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub max_rounds: usize,
    pub candidates_per_round: usize,
    pub reps: usize,
    /// Diversity is the goal of generation; judging should be stable.
    pub generation_temperature: f64,
    pub checker_temperature: f64,
    pub max_tokens: u32,
    /// Resolution target: the entropy ratio the cluster must reach.
    pub tau_b: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_rounds: 5,
            candidates_per_round: 5,
            reps: 5,
            generation_temperature: 0.8,
            checker_temperature: 0.0,
            max_tokens: 2048,
            tau_b: 0.15,
        }
    }
}

/// The model roles involved in a repair.
pub struct AugmentBackends<'a> {
    pub generator: &'a dyn ChatBackend,
    pub checker: &'a dyn ChatBackend,
    pub embedder: &'a dyn EmbeddingBackend,
}

// ---------------------------------------------------------------------------
// Prompt rendering
// ---------------------------------------------------------------------------

/// Everything the counterfactual-generation template needs for one round.
pub struct AugPromptContext<'a> {
    pub spot: &'a BlindSpot,
    pub round: usize,
    pub current_global: &'a ValueHistogram,
    pub current_local: &'a ValueHistogram,
    pub initial_global: &'a ValueHistogram,
    pub initial_local: &'a ValueHistogram,
    pub history: &'a [RoundState],
    pub reps: &'a [&'a Sample],
    pub original: &'a Sample,
    pub toolset: &'a [ToolSpec],
    /// Non-target (tool.param, histogram) pairs whose distributions must stay
    /// stable.
    pub stable: &'a [(String, ValueHistogram)],
    pub tau_b: f64,
}

fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

fn fmt4_signed(x: f64) -> String {
    format!("{x:+.4}")
}

/// Histogram rendered as `[value: count, ...]`, count-descending. Brackets,
/// not braces: rendered values must never look like unresolved placeholders.
fn dist_desc(histogram: &ValueHistogram) -> String {
    if histogram.total == 0 {
        return "[empty]".to_string();
    }
    let mut entries: Vec<(&String, &u64)> = histogram.counts.iter().collect();
    entries.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    let mut parts: Vec<String> =
        entries.iter().take(20).map(|(v, c)| format!("{v}: {c}")).collect();
    if entries.len() > 20 {
        parts.push("...".to_string());
    }
    format!("[{}]", parts.join(", "))
}

fn history_desc(history: &[RoundState]) -> String {
    if history.is_empty() {
        return "No prior generation rounds.".to_string();
    }
    let parts: Vec<String> = history
        .iter()
        .map(|r| {
            let values: Vec<&str> = r.generated_values.iter().map(String::as_str).collect();
            format!(
                "Round {}: accepted {}, rejected {}, values [{}]",
                r.round,
                r.accepted,
                r.rejected,
                values.join(", ")
            )
        })
        .collect();
    parts.join("; ")
}

fn stable_params_desc(stable: &[(String, ValueHistogram)]) -> String {
    if stable.iter().all(|(_, h)| h.total == 0) {
        return "(no other parameters carry existing value distributions)".to_string();
    }
    let mut lines = Vec::new();
    for (path, histogram) in stable {
        if histogram.total == 0 {
            continue;
        }
        lines.push(format!("- {path}: existing values {}", dist_desc(histogram)));
    }
    lines.join("\n")
}

/// Fill the counterfactual-generation template for one round. Every
/// placeholder of the bundled template is resolved; a missing datum is a
/// rendering error, never silently left in the prompt.
pub fn render_aug_prompt(
    templates: &TemplateSet,
    ctx: &AugPromptContext<'_>,
) -> Result<String, TemplateError> {
    let param_path = ctx.spot.param_path();
    let h_g0 = ctx.spot.h_global;
    let h_l0 = ctx.spot.h_cluster;
    let r0 = ctx.spot.ratio;
    let h_g = entropy(ctx.current_global);
    let h_l = entropy(ctx.current_local);
    let r = if h_g > 0.0 { h_l / h_g } else { 0.0 };

    let reps_desc = ctx
        .reps
        .iter()
        .map(|s| format!("- \"{}\"", s.query))
        .collect::<Vec<_>>()
        .join("\n");

    let mut vars: BTreeMap<&str, String> = BTreeMap::new();
    vars.insert("step", ctx.round.to_string());
    vars.insert("step-1", ctx.round.saturating_sub(1).to_string());
    vars.insert("tool_param", param_path.clone());
    vars.insert("tool_param.split('.')[-1]", ctx.spot.parameter.clone());
    vars.insert("initial_state['global_entropy']:.4f", fmt4(h_g0));
    vars.insert("initial_state['local_entropy']:.4f", fmt4(h_l0));
    vars.insert("initial_state['entropy_ratio']:.4f", fmt4(r0));
    vars.insert("current_state['global_entropy']:.4f", fmt4(h_g));
    vars.insert("current_state['local_entropy']:.4f", fmt4(h_l));
    vars.insert("current_state['entropy_ratio']:.4f", fmt4(r));
    vars.insert(
        "current_state['global_entropy'] - initial_state['global_entropy']:+.4f",
        fmt4_signed(h_g - h_g0),
    );
    vars.insert(
        "current_state['local_entropy'] - initial_state['local_entropy']:+.4f",
        fmt4_signed(h_l - h_l0),
    );
    vars.insert(
        "current_state['entropy_ratio'] - initial_state['entropy_ratio']:+.4f",
        fmt4_signed(r - r0),
    );
    vars.insert("blind_entropy_ration_threshold", fmt4(ctx.tau_b));
    vars.insert("history_desc", history_desc(ctx.history));
    vars.insert("initial_global_dist_desc", dist_desc(ctx.initial_global));
    vars.insert("initial_local_dist_desc", dist_desc(ctx.initial_local));
    vars.insert("current_global_dist_desc", dist_desc(ctx.current_global));
    vars.insert("current_local_dist_desc", dist_desc(ctx.current_local));
    vars.insert("instruction", canonical_json(&ctx.toolset));
    vars.insert("input_text", reps_desc);
    vars.insert("user_query", ctx.original.query.clone());
    vars.insert("tool_call", canonical_json(&ctx.original.answers));
    vars.insert("stable_params_desc", stable_params_desc(ctx.stable));

    render(&templates.counterfactual_generation, &vars)
}

// ---------------------------------------------------------------------------
// Response parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct ParsedCandidates {
    pub candidates: Vec<AugCandidate>,
    /// Human-readable reasons for elements that were dropped.
    pub dropped: Vec<String>,
}

/// Extract candidates from the first JSON array in the generator response.
/// Malformed elements are dropped with a reason; a response with no JSON
/// array at all is [`AugmentorError::NoJsonFound`].
pub fn parse_aug_response(raw: &str, round: usize) -> Result<ParsedCandidates, AugmentorError> {
    let array = extract_first_json_array(raw).ok_or(AugmentorError::NoJsonFound)?;
    let items = array.as_array().expect("extract returns arrays");
    let mut out = ParsedCandidates::default();
    for (i, item) in items.iter().enumerate() {
        match parse_candidate(item, round) {
            Ok(candidate) => out.candidates.push(candidate),
            Err(reason) => {
                log::warn!("dropping augmentation candidate {i}: {reason}");
                out.dropped.push(format!("element {i}: {reason}"));
            }
        }
    }
    Ok(out)
}

fn parse_candidate(item: &serde_json::Value, round: usize) -> Result<AugCandidate, String> {
    let obj = item.as_object().ok_or("not a JSON object")?;
    let new_query = obj
        .get("new_query")
        .and_then(|v| v.as_str())
        .ok_or("missing new_query")?
        .to_string();
    let new_value = obj
        .iter()
        .find(|(k, _)| *k == "new_value" || k.starts_with("new_value_for"))
        .map(|(_, v)| scalar_text(v))
        .transpose()?
        .ok_or("missing new_value key")?;
    let call_value = obj.get("new_tool_call").ok_or("missing new_tool_call")?;
    let call_value = match call_value {
        serde_json::Value::String(inner) => {
            serde_json::from_str::<serde_json::Value>(inner).map_err(|e| format!("new_tool_call: {e}"))?
        }
        other => other.clone(),
    };
    // A single call object is tolerated and wrapped into a list.
    let call_value = if call_value.is_object() {
        serde_json::Value::Array(vec![call_value])
    } else {
        call_value
    };
    let new_tool_call =
        corpus::parse_call_array(&call_value, "new_tool_call").map_err(|e| e.to_string())?;
    let step_rationale = obj
        .get("step_rationale")
        .and_then(|v| v.as_str())
        .ok_or("missing step_rationale")?
        .to_string();
    Ok(AugCandidate { new_query, new_value, new_tool_call, step_rationale, round })
}

fn scalar_text(value: &serde_json::Value) -> Result<String, String> {
    match value {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        serde_json::Value::Bool(b) => Ok(b.to_string()),
        _ => Err("new_value is not a scalar".to_string()),
    }
}

// ---------------------------------------------------------------------------
// Candidate validation
// ---------------------------------------------------------------------------

/// Validation context for one candidate: the spot, its toolset, the target
/// cluster's live histogram, and the global histograms of non-target
/// parameters (the stability constraint).
pub struct CandidateGate<'a> {
    pub spot: &'a BlindSpot,
    pub toolset: &'a [ToolSpec],
    pub cluster_hist: &'a ValueHistogram,
    pub stable: &'a BTreeMap<(String, String), ValueHistogram>,
}

/// Three gates in order: schema validity, diversity gain on the target
/// parameter, then semantic consistency via the checker model. A checker
/// infrastructure failure parks the candidate (error) instead of rejecting.
pub fn validate_candidate(
    candidate: &AugCandidate,
    gate: &CandidateGate<'_>,
    checker: &dyn ChatBackend,
    templates: &TemplateSet,
    checker_temperature: f64,
) -> Result<Verdict, AugmentorError> {
    // Gate 1: schema.
    if candidate.new_tool_call.is_empty() {
        return Ok(Verdict::Rejected(RejectReason::Schema("empty tool-call list".to_string())));
    }
    for call in &candidate.new_tool_call {
        let Some(spec) = gate.toolset.iter().find(|t| t.name == call.name) else {
            return Ok(Verdict::Rejected(RejectReason::Schema(format!(
                "unknown tool {:?}",
                call.name
            ))));
        };
        let report = corpus::validate_call(call, spec)?;
        if !report.is_valid() {
            return Ok(Verdict::Rejected(RejectReason::Schema(report.to_json())));
        }
    }
    let target_value = candidate
        .new_tool_call
        .iter()
        .filter(|c| c.name == gate.spot.tool)
        .find_map(|c| c.arguments.get(&gate.spot.parameter));
    let Some(target_value) = target_value else {
        return Ok(Verdict::Rejected(RejectReason::Schema(format!(
            "no call carries target parameter {}",
            gate.spot.param_path()
        ))));
    };
    let normalized = target_value.normalized();
    if normalized != ScalarValue::String(candidate.new_value.clone()).normalized() {
        return Ok(Verdict::Rejected(RejectReason::TargetValueMismatch));
    }

    // Gate 2: the target value must add diversity to the cluster.
    let is_new = !gate.cluster_hist.contains(&normalized);
    let gains = gate.cluster_hist.entropy_with(&normalized) > entropy(gate.cluster_hist);
    if !(is_new || gains) {
        return Ok(Verdict::Rejected(RejectReason::NoDiversityGain));
    }

    // Stability: non-target parameters may not introduce values absent from
    // their existing global distributions.
    for call in &candidate.new_tool_call {
        for (param, value) in &call.arguments {
            if call.name == gate.spot.tool && param == &gate.spot.parameter {
                continue;
            }
            let key = (call.name.clone(), param.clone());
            if let Some(hist) = gate.stable.get(&key) {
                if hist.total > 0 && !hist.contains(&value.normalized()) {
                    return Ok(Verdict::Rejected(RejectReason::Stability(format!(
                        "{}.{} = {:?} not in existing distribution",
                        call.name,
                        param,
                        value.normalized()
                    ))));
                }
            }
        }
    }

    // Gate 3: semantic consistency via the checker model.
    let mut vars: BTreeMap<&str, String> = BTreeMap::new();
    vars.insert("query", candidate.new_query.clone());
    vars.insert("tools", canonical_json(&gate.toolset));
    vars.insert("tool_call", canonical_json(&candidate.new_tool_call));
    let prompt = render(&templates.consistency_checker, &vars)?;
    let request = ChatRequest::new("", prompt)
        .with_temperature(checker_temperature)
        .with_max_tokens(512);
    let raw = checker
        .complete(&request)
        .map_err(|e| AugmentorError::CheckerUnavailable(e.to_string()))?;
    let verdict = extract_first_json_array(&raw)
        .and_then(|v| v.as_array().and_then(|a| a.first().cloned()))
        .and_then(|first| {
            first.get("result").and_then(|r| r.as_str()).map(|s| s.trim().to_string())
        });
    match verdict.as_deref() {
        Some("Consistent") => Ok(Verdict::Accepted),
        Some("Inconsistent") => Ok(Verdict::Rejected(RejectReason::Inconsistent)),
        other => Err(AugmentorError::CheckerUnavailable(format!(
            "unusable checker verdict: {other:?} in {raw:?}"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Repair session
// ---------------------------------------------------------------------------

/// Sequential repair of one blind spot against a snapshot of the corpus.
/// Accepted samples join the working buffer and inherit the source cluster,
/// so each round sees the entropy state left by the previous one. The
/// original buffer is never touched; accepted samples come back in the
/// report delta.
pub struct BlindSpotRepair<'a> {
    spot: BlindSpot,
    buffer: Buffer,
    clustering: Clustering,
    backends: AugmentBackends<'a>,
    templates: &'a TemplateSet,
    config: AugmentConfig,
    initial_global: ValueHistogram,
    initial_local: ValueHistogram,
    original_id: String,
    toolset: Vec<ToolSpec>,
    rounds: Vec<RoundState>,
    new_samples: Vec<Sample>,
    parked: Vec<(AugCandidate, String)>,
}

impl<'a> BlindSpotRepair<'a> {
    pub fn new(
        spot: BlindSpot,
        buffer: &Buffer,
        clustering: &Clustering,
        backends: AugmentBackends<'a>,
        templates: &'a TemplateSet,
        config: AugmentConfig,
    ) -> Result<Self, AugmentorError> {
        let initial_global = value_histogram(buffer, &spot.tool, &spot.parameter, Scope::All, None)?;
        let initial_local = value_histogram(
            buffer,
            &spot.tool,
            &spot.parameter,
            Scope::Cluster(spot.cluster),
            Some(clustering),
        )?;
        let members = clustering.members(spot.cluster, buffer);
        let original = members
            .iter()
            .find(|s| {
                s.answers
                    .iter()
                    .any(|c| c.name == spot.tool && c.arguments.contains_key(&spot.parameter))
            })
            .or_else(|| members.first())
            .ok_or(AugmentorError::NoClusterMembers(spot.cluster))?;
        let toolset = original.tools.clone();
        let original_id = original.id.clone();
        Ok(Self {
            spot,
            buffer: buffer.clone(),
            clustering: clustering.clone(),
            backends,
            templates,
            config,
            initial_global,
            initial_local,
            original_id,
            toolset,
            rounds: Vec::new(),
            new_samples: Vec::new(),
            parked: Vec::new(),
        })
    }

    fn histograms(&self) -> Result<(ValueHistogram, ValueHistogram), AugmentorError> {
        let global =
            value_histogram(&self.buffer, &self.spot.tool, &self.spot.parameter, Scope::All, None)?;
        let local = value_histogram(
            &self.buffer,
            &self.spot.tool,
            &self.spot.parameter,
            Scope::Cluster(self.spot.cluster),
            Some(&self.clustering),
        )?;
        Ok((global, local))
    }

    /// Current entropy ratio of the target cluster.
    pub fn ratio(&self) -> f64 {
        match self.histograms() {
            Ok((global, local)) => {
                let h_g = entropy(&global);
                if h_g > 0.0 {
                    entropy(&local) / h_g
                } else {
                    0.0
                }
            }
            Err(_) => 0.0,
        }
    }

    pub fn resolved(&self) -> bool {
        self.ratio() >= self.config.tau_b
    }

    pub fn rounds(&self) -> &[RoundState] {
        &self.rounds
    }

    /// One generation round: render, generate once, parse, validate each
    /// candidate, and fold accepted samples into the working state.
    pub fn run_round(&mut self) -> Result<RoundState, AugmentorError> {
        let round = self.rounds.len() + 1;
        let (global_before, local_before) = self.histograms()?;
        let h_global_before = entropy(&global_before);
        let h_cluster_before = entropy(&local_before);
        let ratio_before =
            if h_global_before > 0.0 { h_cluster_before / h_global_before } else { 0.0 };

        let mut state = RoundState {
            round,
            h_global_before,
            h_global_after: h_global_before,
            h_cluster_before,
            h_cluster_after: h_cluster_before,
            ratio_before,
            ratio_after: ratio_before,
            accepted: 0,
            rejected: 0,
            generated_values: BTreeSet::new(),
        };

        let reps =
            semantics::representatives(self.spot.cluster, &self.clustering, &self.buffer, self.config.reps)?;
        let original = self
            .buffer
            .get(&self.original_id)
            .ok_or(AugmentorError::NoClusterMembers(self.spot.cluster))?;

        let stable_pairs = self.stable_histograms()?;
        let stable_desc: Vec<(String, ValueHistogram)> = stable_pairs
            .iter()
            .map(|((tool, param), h)| (format!("{tool}.{param}"), h.clone()))
            .collect();

        let prompt = render_aug_prompt(
            self.templates,
            &AugPromptContext {
                spot: &self.spot,
                round,
                current_global: &global_before,
                current_local: &local_before,
                initial_global: &self.initial_global,
                initial_local: &self.initial_local,
                history: &self.rounds,
                reps: &reps,
                original,
                toolset: &self.toolset,
                stable: &stable_desc,
                tau_b: self.config.tau_b,
            },
        )?;

        let request = ChatRequest::new("", prompt)
            .with_temperature(self.config.generation_temperature)
            .with_max_tokens(self.config.max_tokens);
        let raw = self.backends.generator.complete(&request)?;

        let parsed = match parse_aug_response(&raw, round) {
            Ok(parsed) => parsed,
            Err(AugmentorError::NoJsonFound) => {
                log::warn!(
                    "generator produced no JSON for {} round {round}; counting a failed round",
                    self.spot.param_path()
                );
                self.rounds.push(state.clone());
                return Ok(state);
            }
            Err(e) => return Err(e),
        };

        let mut cluster_hist = local_before.clone();
        let mut accepted_samples = Vec::new();
        for candidate in parsed.candidates.into_iter().take(self.config.candidates_per_round) {
            state.generated_values.insert(
                ScalarValue::String(candidate.new_value.clone()).normalized(),
            );
            let gate = CandidateGate {
                spot: &self.spot,
                toolset: &self.toolset,
                cluster_hist: &cluster_hist,
                stable: &stable_pairs,
            };
            let verdict = match validate_candidate(
                &candidate,
                &gate,
                self.backends.checker,
                self.templates,
                self.config.checker_temperature,
            ) {
                Ok(v) => v,
                Err(AugmentorError::CheckerUnavailable(reason)) => {
                    log::warn!("parking candidate ({reason})");
                    self.parked.push((candidate, reason));
                    continue;
                }
                Err(e) => return Err(e),
            };
            match verdict {
                Verdict::Accepted => {
                    let sample = match Sample::new(
                        candidate.new_query.clone(),
                        candidate.new_tool_call.clone(),
                        self.toolset.clone(),
                        Origin::Augmented,
                    ) {
                        Ok(s) => s,
                        Err(e) => {
                            state.rejected += 1;
                            log::warn!("accepted candidate failed corpus validation: {e}");
                            continue;
                        }
                    };
                    if self.buffer.contains(&sample.id)
                        || accepted_samples.iter().any(|s: &Sample| s.id == sample.id)
                    {
                        state.rejected += 1;
                        continue;
                    }
                    let value_norm = candidate
                        .new_tool_call
                        .iter()
                        .filter(|c| c.name == self.spot.tool)
                        .find_map(|c| c.arguments.get(&self.spot.parameter))
                        .map(|v| v.normalized())
                        .unwrap_or_default();
                    cluster_hist.add(value_norm);
                    accepted_samples.push(sample);
                    state.accepted += 1;
                }
                Verdict::Rejected(reason) => {
                    state.rejected += 1;
                    log::debug!("rejected candidate: {reason:?}");
                }
            }
        }

        if !accepted_samples.is_empty() {
            let texts: Vec<&str> = accepted_samples.iter().map(|s| s.query.as_str()).collect();
            let embeddings = self.backends.embedder.embed_batch(&texts)?;
            for (sample, e) in accepted_samples.iter_mut().zip(embeddings) {
                sample.embedding = Some(e.vector);
            }
            for sample in &accepted_samples {
                self.clustering.assignment.insert(sample.id.clone(), self.spot.cluster);
            }
            self.buffer = corpus::merge(&self.buffer, &Buffer::from_samples(accepted_samples.clone()));
            self.new_samples.extend(accepted_samples);
        }

        let (global_after, local_after) = self.histograms()?;
        state.h_global_after = entropy(&global_after);
        state.h_cluster_after = entropy(&local_after);
        state.ratio_after = if state.h_global_after > 0.0 {
            state.h_cluster_after / state.h_global_after
        } else {
            0.0
        };
        self.rounds.push(state.clone());
        Ok(state)
    }

    /// Global histograms of every declared (tool, parameter) except the
    /// target pair: the distributions candidates must not disrupt.
    fn stable_histograms(
        &self,
    ) -> Result<BTreeMap<(String, String), ValueHistogram>, AugmentorError> {
        let mut out = BTreeMap::new();
        for tool in &self.toolset {
            for param in tool.parameters.keys() {
                if tool.name == self.spot.tool && param == &self.spot.parameter {
                    continue;
                }
                let hist =
                    value_histogram(&self.buffer, &tool.name, param, Scope::All, None)?;
                out.insert((tool.name.clone(), param.clone()), hist);
            }
        }
        Ok(out)
    }

    pub fn into_report(self) -> AugmentationReport {
        let resolved = self.resolved();
        AugmentationReport {
            blind_spot: self.spot,
            rounds: self.rounds,
            resolved,
            new_samples: self.new_samples,
        }
    }

    /// Candidates parked on checker infrastructure failure, never silently
    /// accepted, kept for a retry pass.
    pub fn parked(&self) -> &[(AugCandidate, String)] {
        &self.parked
    }
}

/// Loop rounds until the cluster's entropy ratio reaches tau_b or max_rounds
/// is exhausted. Round-level failures are recorded and do not abort the spot.
pub fn augment_blind_spot(
    spot: &BlindSpot,
    buffer: &Buffer,
    clustering: &Clustering,
    backends: AugmentBackends<'_>,
    templates: &TemplateSet,
    config: AugmentConfig,
) -> Result<AugmentationReport, AugmentorError> {
    let mut repair = BlindSpotRepair::new(spot.clone(), buffer, clustering, backends, templates, config)?;
    for _ in 0..config.max_rounds {
        if repair.resolved() {
            break;
        }
        if let Err(e) = repair.run_round() {
            log::warn!("round failed for {}: {e}", spot.param_path());
        }
    }
    Ok(repair.into_report())
}

/// Merge every report's accepted samples into the buffer (id-level dedup via
/// the corpus merge), then drop augmented queries that near-duplicate the
/// buffer or each other at the given cosine threshold.
pub fn assemble(
    buffer: &Buffer,
    reports: &[AugmentationReport],
    embedder: &dyn EmbeddingBackend,
    dedup_threshold: f64,
) -> Result<Buffer, AugmentorError> {
    if reports.iter().all(|r| r.new_samples.is_empty()) {
        return Ok(buffer.clone());
    }
    let base = semantics::embed_buffer(buffer, embedder)?;

    let mut kept: Vec<Sample> = Vec::new();
    for report in reports {
        for sample in &report.new_samples {
            if base.contains(&sample.id) || kept.iter().any(|s| s.id == sample.id) {
                continue;
            }
            let mut sample = sample.clone();
            if sample.embedding.is_none() {
                let e = embedder.embed_batch(&[sample.query.as_str()])?;
                sample.embedding = Some(e.into_iter().next().expect("one embedding").vector);
            }
            let query_embedding =
                crate::semantics::Embedding::new(sample.embedding.clone().expect("just set"));
            let hits = semantics::near_duplicates_of(&query_embedding, &base, dedup_threshold)?;
            if !hits.is_empty() {
                log::info!(
                    "dropping near-duplicate augmented query {:?} (matches {})",
                    sample.query,
                    hits[0].0
                );
                continue;
            }
            let dup_of_kept = kept.iter().any(|s| {
                let e = crate::semantics::Embedding::new(s.embedding.clone().expect("kept embedded"));
                crate::semantics::cosine(&query_embedding, &e).map(|c| c >= dedup_threshold).unwrap_or(false)
            });
            if dup_of_kept {
                continue;
            }
            kept.push(sample);
        }
    }
    Ok(corpus::merge(&base, &Buffer::from_samples(kept)))
}

/// Extend a clustering with each report's accepted samples, assigned to the
/// cluster they repaired. A full re-cluster belongs to the next pipeline
/// cycle, not mid-repair.
pub fn extend_clustering(clustering: &Clustering, reports: &[AugmentationReport]) -> Clustering {
    let mut extended = clustering.clone();
    for report in reports {
        for sample in &report.new_samples {
            extended.assignment.insert(sample.id.clone(), report.blind_spot.cluster);
        }
    }
    extended
}
