//! Data collection and construction: ingest online queries with
//! near-duplicate dedup, generate reference tool calls through few-shot
//! prompting against a stronger backend, triage by consistency with the
//! serving model's calls, and exchange disagreements with expert annotators
//! through append-only JSONL files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{canonical_json, extract_first_json_array, parse_call_array, Buffer, Origin, Sample, ToolCall, ToolSpec};
use crate::gateway::{self, ChatBackend, ChatRequest, GatewayError};
use crate::scoring::{em_value, f1_param, f1_tool};
use crate::semantics::{self, EmbeddingBackend, SemanticsError};
use crate::templates::{render, TemplateError, TemplateSet};

#[derive(Debug, thiserror::Error)]
pub enum ConstructorError {
    #[error("buffer is empty; cannot build few-shot examples")]
    EmptyBuffer,
    #[error("backend error: {0}")]
    Backend(#[from] GatewayError),
    #[error("unparseable backend response: {0}")]
    UnparseableResponse(String),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One online query with the serving model's tool calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncomingQuery {
    pub query: String,
    pub online_answer: Vec<ToolCall>,
    pub toolset: Vec<ToolSpec>,
    #[serde(default)]
    pub timestamp_ms: u64,
}

/// Evidence for why an incoming query was dropped as a duplicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DupEvidence {
    BufferSample { id: String, similarity: f64 },
    EarlierInBatch { index: usize, similarity: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DroppedQuery {
    pub query: IncomingQuery,
    pub evidence: DupEvidence,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub candidates: Vec<IncomingQuery>,
    pub dropped: Vec<DroppedQuery>,
}

/// Read incoming queries from JSONL, validating that every online answer
/// names a tool in its own toolset.
pub fn read_incoming(path: impl AsRef<Path>) -> Result<Vec<IncomingQuery>, ConstructorError> {
    let text = std::fs::read_to_string(path)?;
    parse_incoming(&text)
}

pub fn parse_incoming(text: &str) -> Result<Vec<IncomingQuery>, ConstructorError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: IncomingQuery = serde_json::from_str(line)
            .map_err(|e| ConstructorError::MalformedRow { line: i + 1, reason: e.to_string() })?;
        for call in &q.online_answer {
            if !q.toolset.iter().any(|t| t.name == call.name) {
                return Err(ConstructorError::MalformedRow {
                    line: i + 1,
                    reason: format!("online answer names unknown tool {:?}", call.name),
                });
            }
        }
        out.push(q);
    }
    Ok(out)
}

/// Partition a batch into novel candidates and near-duplicates, checking both
/// against the buffer and against earlier queries in the same batch (first
/// occurrence wins; ingest is intentionally order-dependent).
pub fn ingest(
    queries: Vec<IncomingQuery>,
    buffer: &Buffer,
    threshold: f64,
    embedder: &dyn EmbeddingBackend,
) -> Result<IngestOutcome, ConstructorError> {
    if queries.is_empty() {
        return Ok(IngestOutcome::default());
    }
    let texts: Vec<&str> = queries.iter().map(|q| q.query.as_str()).collect();
    let embeddings = embedder.embed_batch(&texts)?;

    let mut outcome = IngestOutcome::default();
    let mut kept: Vec<(usize, crate::semantics::Embedding)> = Vec::new();
    for (i, (query, embedding)) in queries.into_iter().zip(embeddings).enumerate() {
        let buffer_hits = semantics::near_duplicates_of(&embedding, buffer, threshold)?;
        if let Some((id, similarity)) = buffer_hits.into_iter().next() {
            outcome.dropped.push(DroppedQuery {
                query,
                evidence: DupEvidence::BufferSample { id, similarity },
            });
            continue;
        }
        let batch_hit = kept.iter().find_map(|(j, e)| {
            let sim = semantics::cosine(&embedding, e).ok()?;
            (sim >= threshold).then_some((*j, sim))
        });
        if let Some((index, similarity)) = batch_hit {
            outcome.dropped.push(DroppedQuery {
                query,
                evidence: DupEvidence::EarlierInBatch { index, similarity },
            });
            continue;
        }
        kept.push((i, embedding));
        outcome.candidates.push(query);
    }
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Few-shot reference generation
// ---------------------------------------------------------------------------

/// Render the few-shot generator prompt. The template declares FIVE examples;
/// fewer are allowed only when the buffer itself is smaller, in which case a
/// note is emitted into the examples section.
pub fn render_fewshot_prompt(
    templates: &TemplateSet,
    query: &str,
    shots: &[&Sample],
    toolset: &[ToolSpec],
) -> Result<String, ConstructorError> {
    if shots.is_empty() {
        return Err(ConstructorError::EmptyBuffer);
    }
    let mut blocks = Vec::with_capacity(shots.len() + 1);
    for (i, shot) in shots.iter().enumerate() {
        blocks.push(format!(
            "Example {}:\nQuery: {}\nToolset: {}\nCorrect tool calls: {}",
            i + 1,
            shot.query,
            canonical_json(&shot.tools),
            canonical_json(&shot.answers),
        ));
    }
    if shots.len() < 5 {
        blocks.push(format!(
            "(only {} of the five examples are available: the buffer holds fewer samples)",
            shots.len()
        ));
    }
    let mut vars: BTreeMap<&str, String> = BTreeMap::new();
    vars.insert("FEW_SHOT_EXAMPLES", blocks.join("\n\n"));
    vars.insert("CURRENT_QUERY", query.to_string());
    vars.insert("CURRENT_TOOLSET", canonical_json(&toolset));
    Ok(render(&templates.fewshot_generator, &vars)?)
}

/// Generate the reference tool-call list for a query: retrieve the most
/// similar buffered samples as shots, prompt the backend, and parse a strict
/// JSON call list (an empty list is a valid "no tool required" answer).
pub fn reference_calls(
    query: &str,
    buffer: &Buffer,
    toolset: &[ToolSpec],
    chat: &dyn ChatBackend,
    embedder: &dyn EmbeddingBackend,
    templates: &TemplateSet,
    temperature: f64,
) -> Result<Vec<ToolCall>, ConstructorError> {
    let shots = semantics::top_k_similar(query, buffer, 5, embedder)?;
    let prompt = render_fewshot_prompt(templates, query, &shots, toolset)?;
    let request = ChatRequest::new("", prompt).with_temperature(temperature).with_max_tokens(1024);
    let raw = chat.complete(&request)?;
    parse_reference_response(&raw)
}

pub fn parse_reference_response(raw: &str) -> Result<Vec<ToolCall>, ConstructorError> {
    let array = extract_first_json_array(raw)
        .ok_or_else(|| ConstructorError::UnparseableResponse(raw.to_string()))?;
    parse_call_array(&array, "response")
        .map_err(|e| ConstructorError::UnparseableResponse(e.to_string()))
}

/// True iff the two call lists agree perfectly under the reward semantics:
/// tool multiset, parameter key sets, and exact values all match.
pub fn consistent(a: &[ToolCall], b: &[ToolCall]) -> bool {
    let eps = 1e-12;
    f1_tool(a, b) >= 1.0 - eps && f1_param(a, b) >= 1.0 - eps && em_value(a, b) >= 1.0 - eps
}

// ---------------------------------------------------------------------------
// Triage
// ---------------------------------------------------------------------------

/// Disagreement record exchanged with expert annotators. Append-only: experts
/// set `status` and fill `approved_calls`; the pipeline never edits rows in
/// place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub query: String,
    pub online_calls: Vec<ToolCall>,
    pub reference_calls: Vec<ToolCall>,
    pub tools: Vec<ToolSpec>,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approved_calls: Option<Vec<ToolCall>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageOutcome {
    Merged,
    Exported,
    Parked,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub query: String,
    pub outcome: TriageOutcome,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParkedCandidate {
    pub candidate: IncomingQuery,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TriageReport {
    pub merged: Vec<Sample>,
    pub exported: Vec<AnnotationRecord>,
    pub parked: Vec<ParkedCandidate>,
    pub outcomes: Vec<OutcomeRow>,
}

pub struct TriageSetup<'a> {
    pub chat: &'a dyn ChatBackend,
    pub embedder: &'a dyn EmbeddingBackend,
    pub templates: &'a TemplateSet,
    pub temperature: f64,
    pub parallelism: usize,
}

/// For each candidate, generate reference calls and compare with the online
/// answer: agreement merges the pair as ground truth (origin = online),
/// disagreement exports it for expert annotation, and backend failures park
/// the candidate for retry. Every candidate lands in exactly one bucket.
pub fn triage(
    candidates: Vec<IncomingQuery>,
    buffer: &Buffer,
    setup: &TriageSetup<'_>,
) -> Result<TriageReport, ConstructorError> {
    let mut report = TriageReport::default();

    // Prompts first (embedding retrieval is cheap and sequential), then the
    // chat calls with bounded parallelism, then a deterministic fold.
    let mut prepared: Vec<(IncomingQuery, Result<ChatRequest, ConstructorError>)> = Vec::new();
    for candidate in candidates {
        let request = semantics::top_k_similar(&candidate.query, buffer, 5, setup.embedder)
            .map_err(ConstructorError::from)
            .and_then(|shots| {
                render_fewshot_prompt(setup.templates, &candidate.query, &shots, &candidate.toolset)
            })
            .map(|prompt| {
                ChatRequest::new("", prompt)
                    .with_temperature(setup.temperature)
                    .with_max_tokens(1024)
            });
        prepared.push((candidate, request));
    }

    let requests: Vec<ChatRequest> =
        prepared.iter().filter_map(|(_, r)| r.as_ref().ok().cloned()).collect();
    let mut responses = gateway::complete_many(setup.chat, &requests, setup.parallelism).into_iter();

    for (candidate, request) in prepared {
        match request {
            Err(e) => {
                report.outcomes.push(OutcomeRow {
                    query: candidate.query.clone(),
                    outcome: TriageOutcome::Parked,
                    detail: e.to_string(),
                });
                report.parked.push(ParkedCandidate { candidate, reason: e.to_string() });
            }
            Ok(_) => {
                let response = responses.next().expect("one response per prepared request");
                match response.map_err(ConstructorError::from).and_then(|raw| parse_reference_response(&raw)) {
                    Ok(reference) => {
                        if consistent(&candidate.online_answer, &reference) {
                            match Sample::new(
                                candidate.query.clone(),
                                candidate.online_answer.clone(),
                                candidate.toolset.clone(),
                                Origin::Online,
                            ) {
                                Ok(sample) => {
                                    report.outcomes.push(OutcomeRow {
                                        query: candidate.query.clone(),
                                        outcome: TriageOutcome::Merged,
                                        detail: format!("sample {}", sample.id),
                                    });
                                    report.merged.push(sample);
                                }
                                Err(e) => {
                                    report.outcomes.push(OutcomeRow {
                                        query: candidate.query.clone(),
                                        outcome: TriageOutcome::Parked,
                                        detail: e.to_string(),
                                    });
                                    report.parked.push(ParkedCandidate {
                                        candidate,
                                        reason: e.to_string(),
                                    });
                                }
                            }
                        } else {
                            report.outcomes.push(OutcomeRow {
                                query: candidate.query.clone(),
                                outcome: TriageOutcome::Exported,
                                detail: "online and reference calls disagree".to_string(),
                            });
                            report.exported.push(AnnotationRecord {
                                query: candidate.query,
                                online_calls: candidate.online_answer,
                                reference_calls: reference,
                                tools: candidate.toolset,
                                status: "pending".to_string(),
                                approved_calls: None,
                            });
                        }
                    }
                    Err(e) => {
                        report.outcomes.push(OutcomeRow {
                            query: candidate.query.clone(),
                            outcome: TriageOutcome::Parked,
                            detail: e.to_string(),
                        });
                        report.parked.push(ParkedCandidate { candidate, reason: e.to_string() });
                    }
                }
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Annotation exchange
// ---------------------------------------------------------------------------

pub fn write_annotations(
    path: impl AsRef<Path>,
    records: &[AnnotationRecord],
) -> Result<(), ConstructorError> {
    let mut text = String::new();
    for record in records {
        text.push_str(&canonical_json(record));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectedRow {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ImportOutcome {
    pub samples: Vec<Sample>,
    pub rejected: Vec<RejectedRow>,
}

/// Import expert-approved annotation rows as online samples. A row imports
/// when it carries `approved_calls`; rows that fail corpus validation are
/// rejected with reasons and do not affect the others.
pub fn import_annotations(text: &str) -> Result<ImportOutcome, ConstructorError> {
    let mut outcome = ImportOutcome::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let record: AnnotationRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                outcome.rejected.push(RejectedRow { line: line_no, reason: e.to_string() });
                continue;
            }
        };
        let Some(calls) = record.approved_calls else {
            outcome.rejected.push(RejectedRow {
                line: line_no,
                reason: format!("no approved_calls (status {:?})", record.status),
            });
            continue;
        };
        match Sample::new(record.query, calls, record.tools, Origin::Online) {
            Ok(sample) => outcome.samples.push(sample),
            Err(e) => {
                outcome.rejected.push(RejectedRow { line: line_no, reason: e.to_string() })
            }
        }
    }
    Ok(outcome)
}

pub fn import_annotations_file(path: impl AsRef<Path>) -> Result<ImportOutcome, ConstructorError> {
    let text = std::fs::read_to_string(path)?;
    import_annotations(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ParamKind, ParamSpec, ScalarValue};
    use crate::gateway::MockBackend;
    use crate::semantics::MockEmbedder;

    fn toolset() -> Vec<ToolSpec> {
        let mut parameters = BTreeMap::new();
        parameters.insert(
            "symbol".to_string(),
            ParamSpec { kind: ParamKind::String, required: true, allowed: None },
        );
        vec![ToolSpec {
            name: "quote".to_string(),
            description: "stock quote".to_string(),
            parameters,
        }]
    }

    fn call(symbol: &str) -> ToolCall {
        ToolCall::new("quote").with_arg("symbol", ScalarValue::String(symbol.to_string()))
    }

    fn seed_sample(query: &str, symbol: &str) -> Sample {
        Sample::new(query, vec![call(symbol)], toolset(), Origin::Seed).unwrap()
    }

    fn seed_buffer(embedder: &dyn EmbeddingBackend) -> Buffer {
        let buffer = Buffer::from_samples(
            (0..6).map(|i| seed_sample(&format!("seed query {i}"), &format!("s{i}"))),
        );
        semantics::embed_buffer(&buffer, embedder).unwrap()
    }

    fn incoming(query: &str, symbol: &str) -> IncomingQuery {
        IncomingQuery {
            query: query.to_string(),
            online_answer: vec![call(symbol)],
            toolset: toolset(),
            timestamp_ms: 0,
        }
    }

    #[test]
    fn ingest_drops_buffer_duplicates_and_batch_duplicates() {
        let embedder = MockEmbedder::new(32, 1);
        let buffer = seed_buffer(&embedder);
        let batch = vec![
            incoming("seed query 0", "s0"),   // verbatim buffer duplicate
            incoming("brand new", "n1"),
            incoming("brand new", "n1"),      // intra-batch duplicate
            incoming("also new", "n2"),
        ];
        let outcome = ingest(batch, &buffer, 0.95, &embedder).unwrap();
        assert_eq!(outcome.candidates.len(), 2);
        assert_eq!(outcome.dropped.len(), 2);
        assert!(matches!(outcome.dropped[0].evidence, DupEvidence::BufferSample { .. }));
        assert!(matches!(outcome.dropped[1].evidence, DupEvidence::EarlierInBatch { .. }));
    }

    #[test]
    fn ingest_planted_duplicate_count() {
        let embedder = MockEmbedder::new(32, 5);
        let buffer = seed_buffer(&embedder);
        let mut batch: Vec<IncomingQuery> =
            (0..16).map(|i| incoming(&format!("online q {i}"), &format!("v{i}"))).collect();
        // 4 planted duplicates: two repeats of earlier batch entries, two
        // verbatim seed queries.
        batch.push(incoming("online q 3", "v3"));
        batch.push(incoming("online q 7", "v7"));
        batch.push(incoming("seed query 1", "s1"));
        batch.push(incoming("seed query 2", "s2"));
        let outcome = ingest(batch, &buffer, 0.95, &embedder).unwrap();
        assert_eq!(outcome.candidates.len(), 16);
        assert_eq!(outcome.dropped.len(), 4);
    }

    #[test]
    fn fewshot_prompt_contains_examples_and_resolves() {
        let embedder = MockEmbedder::new(32, 1);
        let buffer = seed_buffer(&embedder);
        let shots = semantics::top_k_similar("seed query 3", &buffer, 5, &embedder).unwrap();
        let prompt =
            render_fewshot_prompt(&TemplateSet::builtin(), "seed query 3", &shots, &toolset())
                .unwrap();
        for i in 1..=5 {
            assert!(prompt.contains(&format!("Example {i}:")));
        }
        // Retrieval order: the verbatim query is the most similar shot.
        assert!(prompt.contains("Example 1:\nQuery: seed query 3"));
        assert!(crate::templates::unresolved_placeholders(&prompt).is_empty());
    }

    #[test]
    fn fewshot_prompt_degraded_mode_notes_small_buffer() {
        let embedder = MockEmbedder::new(32, 1);
        let buffer = semantics::embed_buffer(
            &Buffer::from_samples([seed_sample("only", "s")]),
            &embedder,
        )
        .unwrap();
        let shots = semantics::top_k_similar("x", &buffer, 5, &embedder).unwrap();
        let prompt =
            render_fewshot_prompt(&TemplateSet::builtin(), "x", &shots, &toolset()).unwrap();
        assert!(prompt.contains("only 1 of the five examples"));
        assert!(matches!(
            render_fewshot_prompt(&TemplateSet::builtin(), "x", &[], &toolset()),
            Err(ConstructorError::EmptyBuffer)
        ));
    }

    #[test]
    fn reference_calls_parses_scripted_responses() {
        let embedder = MockEmbedder::new(32, 1);
        let buffer = seed_buffer(&embedder);
        let templates = TemplateSet::builtin();

        let empty = MockBackend::from_responses(["[]"]);
        let calls = reference_calls("q", &buffer, &toolset(), &empty, &embedder, &templates, 0.0)
            .unwrap();
        assert!(calls.is_empty());

        let one = MockBackend::from_responses(
            [r#"[{"name":"quote","arguments":{"symbol":"700"}}]"#],
        );
        let calls = reference_calls("q", &buffer, &toolset(), &one, &embedder, &templates, 0.0)
            .unwrap();
        assert_eq!(calls, vec![call("700")]);

        let wrapped = MockBackend::from_responses(
            ["Sure, here are the calls: [{\"name\":\"quote\",\"arguments\":{\"symbol\":\"1\"}}] hope that helps"],
        );
        let calls = reference_calls("q", &buffer, &toolset(), &wrapped, &embedder, &templates, 0.0)
            .unwrap();
        assert_eq!(calls, vec![call("1")]);

        let prose = MockBackend::from_responses(["no json at all"]);
        assert!(matches!(
            reference_calls("q", &buffer, &toolset(), &prose, &embedder, &templates, 0.0),
            Err(ConstructorError::UnparseableResponse(_))
        ));
    }

    #[test]
    fn consistency_is_order_insensitive_and_value_strict() {
        let a = vec![
            call("700"),
            ToolCall::new("news").with_arg("topic", ScalarValue::String("earnings".into())),
        ];
        let mut b = a.clone();
        b.reverse();
        assert!(consistent(&a, &b));
        assert!(consistent(&b, &a));
        assert!(consistent(&[], &[]));
        let c = vec![
            call("700"),
            ToolCall::new("news").with_arg("topic", ScalarValue::String("ipo".into())),
        ];
        assert!(!consistent(&a, &c));
        assert!(consistent(&a, &a));
    }

    fn triage_fixture(script: MockBackend) -> (TriageReport, usize) {
        let embedder = MockEmbedder::new(32, 1);
        let buffer = seed_buffer(&embedder);
        // 10 candidates q0..q9 calling symbols t0..t9.
        let candidates: Vec<IncomingQuery> =
            (0..10).map(|i| incoming(&format!("candidate {i}"), &format!("t{i}"))).collect();
        let n = candidates.len();
        let setup = TriageSetup {
            chat: &script,
            embedder: &embedder,
            templates: &TemplateSet::builtin(),
            temperature: 0.0,
            parallelism: 1,
        };
        (triage(candidates, &buffer, &setup).unwrap(), n)
    }

    fn agree(symbol: &str) -> String {
        format!(r#"[{{"name":"quote","arguments":{{"symbol":"{symbol}"}}}}]"#)
    }

    #[test]
    fn triage_partitions_agreements_and_disagreements() {
        // 7 scripted agreements, 3 value disagreements, matched per query.
        let pairs: Vec<(String, String)> = (0..10)
            .map(|i| {
                let response =
                    if i < 7 { agree(&format!("t{i}")) } else { agree("wrong-value") };
                (format!("candidate {i}"), response)
            })
            .collect();
        let (report, n) = triage_fixture(MockBackend::from_patterns(pairs));
        assert_eq!(report.merged.len(), 7);
        assert_eq!(report.exported.len(), 3);
        assert!(report.parked.is_empty());
        assert_eq!(report.outcomes.len(), n);
        for sample in &report.merged {
            assert_eq!(sample.origin, Origin::Online);
        }
        for record in &report.exported {
            assert_eq!(record.status, "pending");
            assert!(record.approved_calls.is_none());
            assert_ne!(record.online_calls, record.reference_calls);
        }
    }

    #[test]
    fn triage_parks_backend_failures() {
        // Script provides only 4 responses; the rest exhaust the mock.
        let script = MockBackend::from_responses([
            agree("t0"),
            agree("t1"),
            agree("t2"),
            agree("t3"),
        ]);
        let (report, n) = triage_fixture(script);
        assert_eq!(report.merged.len(), 4);
        assert_eq!(report.parked.len(), 6);
        assert_eq!(report.merged.len() + report.exported.len() + report.parked.len(), n);
    }

    #[test]
    fn annotation_round_trip_reproduces_query() {
        let record = AnnotationRecord {
            query: "disputed query".to_string(),
            online_calls: vec![call("700")],
            reference_calls: vec![call("0700")],
            tools: toolset(),
            status: "pending".to_string(),
            approved_calls: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.jsonl");
        write_annotations(&path, &[record]).unwrap();

        // Expert hand-fix: approve the online calls.
        let mut rows: Vec<AnnotationRecord> = std::fs::read_to_string(&path)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        rows[0].status = "approved".to_string();
        rows[0].approved_calls = Some(rows[0].online_calls.clone());
        write_annotations(&path, &rows).unwrap();

        let outcome = import_annotations_file(&path).unwrap();
        assert_eq!(outcome.samples.len(), 1);
        assert!(outcome.rejected.is_empty());
        assert_eq!(outcome.samples[0].query, "disputed query");
        assert_eq!(outcome.samples[0].origin, Origin::Online);
        assert_eq!(outcome.samples[0].answers, vec![call("700")]);
    }

    #[test]
    fn import_rejects_bad_rows_without_poisoning_good_ones() {
        let good = AnnotationRecord {
            query: "ok".to_string(),
            online_calls: vec![call("1")],
            reference_calls: vec![],
            tools: toolset(),
            status: "approved".to_string(),
            approved_calls: Some(vec![call("1")]),
        };
        let unknown_tool = AnnotationRecord {
            query: "bad".to_string(),
            online_calls: vec![],
            reference_calls: vec![],
            tools: toolset(),
            status: "approved".to_string(),
            approved_calls: Some(vec![ToolCall::new("not_a_tool")]),
        };
        let pending = AnnotationRecord {
            query: "pending".to_string(),
            online_calls: vec![],
            reference_calls: vec![],
            tools: toolset(),
            status: "pending".to_string(),
            approved_calls: None,
        };
        let text = format!(
            "{}\n{}\nnot json\n{}\n",
            canonical_json(&good),
            canonical_json(&unknown_tool),
            canonical_json(&pending)
        );
        let outcome = import_annotations(&text).unwrap();
        assert_eq!(outcome.samples.len(), 1);
        assert_eq!(outcome.samples[0].query, "ok");
        assert_eq!(outcome.rejected.len(), 3);
        let lines: Vec<usize> = outcome.rejected.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![2, 3, 4]);
    }

    #[test]
    fn scripted_triage_is_replayable() {
        let script = || {
            MockBackend::from_patterns(
                (0..10).map(|i| (format!("candidate {i}"), agree(&format!("t{i}")))),
            )
        };
        let (a, _) = triage_fixture(script());
        let (b, _) = triage_fixture(script());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
