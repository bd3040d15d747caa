//! Data model for queries, toolsets, and tool-call lists, plus parsing,
//! validation, and merging of corpora in the xLAM triple format
//! `<query, answers, tools>`.
//!
//! Samples and buffers are immutable after construction; every operation here
//! is a pure function, and buffer "mutation" means building a new [`Buffer`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Errors raised while parsing, validating, or serializing corpus records.
#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("missing field: {0}")]
    MissingField(String),
    #[error("answer references tool not present in toolset: {0}")]
    UnknownToolInAnswer(String),
    #[error("non-scalar argument value at {0}")]
    NonScalarArgument(String),
    #[error("call name {got:?} does not match spec name {expected:?}")]
    NameMismatch { expected: String, got: String },
    #[error("duplicate tool name in toolset: {0}")]
    DuplicateTool(String),
    #[error("empty name in {0}")]
    EmptyName(&'static str),
    #[error("invalid parameter spec for {param:?}: {reason}")]
    InvalidParamSpec { param: String, reason: String },
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<CorpusError>,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A scalar argument value. Nested objects and arrays are rejected at parse
/// time: the corpus format is single-hop calls with flat argument maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarValue {
    Bool(bool),
    Integer(i64),
    Float(f64),
    String(String),
}

impl ScalarValue {
    fn from_json(value: &serde_json::Value, path: &str) -> Result<Self, CorpusError> {
        match value {
            serde_json::Value::Bool(b) => Ok(ScalarValue::Bool(*b)),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Ok(ScalarValue::Integer(i))
                } else if let Some(f) = n.as_f64() {
                    Ok(ScalarValue::Float(f))
                } else {
                    Err(CorpusError::NonScalarArgument(path.to_string()))
                }
            }
            serde_json::Value::String(s) => Ok(ScalarValue::String(s.clone())),
            _ => Err(CorpusError::NonScalarArgument(path.to_string())),
        }
    }

    /// Normalized text form used for histogram counting and exact-match
    /// comparison: surrounding whitespace is trimmed, case is preserved, and
    /// anything that reads as a finite number is rendered canonically
    /// ("7.0" -> "7", 7 -> "7"). A consequence: the string "007" normalizes
    /// to "7".
    pub fn normalized(&self) -> String {
        match self {
            ScalarValue::Bool(b) => b.to_string(),
            ScalarValue::Integer(i) => i.to_string(),
            ScalarValue::Float(f) => canonical_number(*f),
            ScalarValue::String(s) => {
                let t = s.trim();
                match t.parse::<f64>() {
                    Ok(f) if f.is_finite() => canonical_number(f),
                    _ => t.to_string(),
                }
            }
        }
    }

    /// Numeric reading of the value, when it has one.
    pub fn as_number(&self) -> Option<f64> {
        match self {
            ScalarValue::Integer(i) => Some(*i as f64),
            ScalarValue::Float(f) => Some(*f),
            ScalarValue::String(s) => match s.trim().parse::<f64>() {
                Ok(f) if f.is_finite() => Some(f),
                _ => None,
            },
            ScalarValue::Bool(_) => None,
        }
    }
}

impl fmt::Display for ScalarValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.normalized())
    }
}

fn canonical_number(f: f64) -> String {
    if f.fract() == 0.0 && f.abs() < 1e15 {
        format!("{}", f as i64)
    } else {
        format!("{f}")
    }
}

/// Declared value kind of a tool parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    #[serde(alias = "str")]
    String,
    #[serde(alias = "int")]
    Integer,
    #[serde(alias = "number")]
    Float,
    #[serde(alias = "bool")]
    Boolean,
    Enum,
}

/// Schema of one tool parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    #[serde(rename = "type")]
    pub kind: ParamKind,
    #[serde(default)]
    pub required: bool,
    /// Allowed values; present iff `kind` is [`ParamKind::Enum`].
    #[serde(default, rename = "enum", skip_serializing_if = "Option::is_none")]
    pub allowed: Option<Vec<String>>,
}

impl ParamSpec {
    fn validate(&self, param: &str) -> Result<(), CorpusError> {
        match (&self.allowed, self.kind) {
            (Some(_), ParamKind::Enum) => Ok(()),
            (Some(_), _) => Err(CorpusError::InvalidParamSpec {
                param: param.to_string(),
                reason: "allowed values declared on a non-enum kind".to_string(),
            }),
            (None, ParamKind::Enum) => Err(CorpusError::InvalidParamSpec {
                param: param.to_string(),
                reason: "enum kind requires allowed values".to_string(),
            }),
            (None, _) => Ok(()),
        }
    }
}

/// A tool's schema: name, description, and its declared parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, ParamSpec>,
}

/// A concrete invocation: tool name plus flat argument map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: BTreeMap<String, ScalarValue>,
}

impl ToolCall {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), arguments: BTreeMap::new() }
    }

    pub fn with_arg(mut self, key: impl Into<String>, value: ScalarValue) -> Self {
        self.arguments.insert(key.into(), value);
        self
    }
}

/// Provenance of a sample within the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Seed,
    Online,
    Augmented,
}

/// One `<query, answers, tools>` triple with a content-derived id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub query: String,
    pub answers: Vec<ToolCall>,
    pub tools: Vec<ToolSpec>,
    #[serde(default)]
    pub origin: Origin,
    /// Runtime-only query embedding; lives in the embedding cache file, not
    /// in corpus JSONL.
    #[serde(skip)]
    pub embedding: Option<Vec<f64>>,
}

impl Sample {
    /// Build a validated sample, computing its content id.
    pub fn new(
        query: impl Into<String>,
        answers: Vec<ToolCall>,
        tools: Vec<ToolSpec>,
        origin: Origin,
    ) -> Result<Self, CorpusError> {
        let query = query.into();
        validate_toolset(&tools)?;
        for call in &answers {
            if call.name.is_empty() {
                return Err(CorpusError::EmptyName("tool call"));
            }
            if !tools.iter().any(|t| t.name == call.name) {
                return Err(CorpusError::UnknownToolInAnswer(call.name.clone()));
            }
        }
        let id = sample_id(&query, &answers);
        Ok(Sample { id, query, answers, tools, origin, embedding: None })
    }

    pub fn with_embedding(mut self, vector: Vec<f64>) -> Self {
        self.embedding = Some(vector);
        self
    }
}

/// Content digest over (query, answers) in canonical form. Toolset changes do
/// not produce a new id: dedup is query-level.
pub fn sample_id(query: &str, answers: &[ToolCall]) -> String {
    let payload = serde_json::json!({ "answers": answers, "query": query });
    let canon = canonical_json(&payload);
    let mut hasher = Sha256::new();
    hasher.update(canon.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Canonical rendering of a JSON value: object keys sorted, no insignificant
/// whitespace. serde_json's default map is a BTreeMap, so converting through
/// `Value` sorts keys for free.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("corpus types serialize infallibly");
    serde_json::to_string(&v).expect("JSON value renders infallibly")
}

fn validate_toolset(tools: &[ToolSpec]) -> Result<(), CorpusError> {
    let mut seen = std::collections::HashSet::new();
    for tool in tools {
        if tool.name.is_empty() {
            return Err(CorpusError::EmptyName("tool spec"));
        }
        if !seen.insert(tool.name.as_str()) {
            return Err(CorpusError::DuplicateTool(tool.name.clone()));
        }
        for (param, spec) in &tool.parameters {
            spec.validate(param)?;
        }
    }
    Ok(())
}

/// Parse one JSON corpus record into a validated [`Sample`].
///
/// Accepts both inline arrays and the JSON-string-encoded `answers`/`tools`
/// fields found in xLAM exports; key order of the input does not affect the
/// resulting id.
pub fn parse_sample(text: &str) -> Result<Sample, CorpusError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CorpusError::MalformedJson(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| CorpusError::MalformedJson("record is not a JSON object".to_string()))?;

    let query = obj
        .get("query")
        .ok_or_else(|| CorpusError::MissingField("query".to_string()))?
        .as_str()
        .ok_or_else(|| CorpusError::MalformedJson("query is not a string".to_string()))?
        .to_string();

    let answers_value = unwrap_encoded(obj.get("answers"), "answers")?;
    let tools_value = unwrap_encoded(obj.get("tools"), "tools")?;

    let answers = parse_call_array(&answers_value, "answers")?;
    let tools = parse_toolset(&tools_value)?;

    let origin = match obj.get("origin") {
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| CorpusError::MalformedJson(format!("origin: {e}")))?,
        None => Origin::Seed,
    };

    let mut sample = Sample::new(query, answers, tools, origin)?;
    sample.embedding = None;
    Ok(sample)
}

/// Accept either an inline JSON array or a string containing a JSON array.
fn unwrap_encoded(
    value: Option<&serde_json::Value>,
    field: &str,
) -> Result<serde_json::Value, CorpusError> {
    let value = value.ok_or_else(|| CorpusError::MissingField(field.to_string()))?;
    match value {
        serde_json::Value::String(inner) => serde_json::from_str(inner)
            .map_err(|e| CorpusError::MalformedJson(format!("{field}: {e}"))),
        other => Ok(other.clone()),
    }
}

/// Parse a JSON array of `{name, arguments}` objects with scalar argument
/// values. Shared by corpus parsing and model-output parsing.
pub fn parse_call_array(value: &serde_json::Value, path: &str) -> Result<Vec<ToolCall>, CorpusError> {
    let items = value
        .as_array()
        .ok_or_else(|| CorpusError::MalformedJson(format!("{path} is not an array")))?;
    let mut calls = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let obj = item
            .as_object()
            .ok_or_else(|| CorpusError::MalformedJson(format!("{path}[{i}] is not an object")))?;
        let name = obj
            .get("name")
            .and_then(|v| v.as_str())
            .ok_or_else(|| CorpusError::MissingField(format!("{path}[{i}].name")))?
            .to_string();
        let mut arguments = BTreeMap::new();
        if let Some(args) = obj.get("arguments") {
            let args = args.as_object().ok_or_else(|| {
                CorpusError::MalformedJson(format!("{path}[{i}].arguments is not an object"))
            })?;
            for (key, raw) in args {
                let arg_path = format!("{path}[{i}].arguments.{key}");
                arguments.insert(key.clone(), ScalarValue::from_json(raw, &arg_path)?);
            }
        }
        calls.push(ToolCall { name, arguments });
    }
    Ok(calls)
}

/// Find the first complete JSON array anywhere in free-form text (model
/// responses often wrap JSON in prose or markdown fences).
pub fn extract_first_json_array(text: &str) -> Option<serde_json::Value> {
    let bytes = text.as_bytes();
    for (i, byte) in bytes.iter().enumerate() {
        if *byte != b'[' {
            continue;
        }
        if let Some(end) = matching_bracket(text, i) {
            if let Ok(value) = serde_json::from_str::<serde_json::Value>(&text[i..=end]) {
                if value.is_array() {
                    return Some(value);
                }
            }
        }
    }
    None
}

fn matching_bracket(text: &str, start: usize) -> Option<usize> {
    let mut depth = 0i64;
    let mut in_string = false;
    let mut escaped = false;
    for (i, byte) in text.as_bytes().iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if *byte == b'\\' {
                escaped = true;
            } else if *byte == b'"' {
                in_string = false;
            }
            continue;
        }
        match byte {
            b'"' => in_string = true,
            b'[' | b'{' => depth += 1,
            b']' | b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_toolset(value: &serde_json::Value) -> Result<Vec<ToolSpec>, CorpusError> {
    let items = value
        .as_array()
        .ok_or_else(|| CorpusError::MalformedJson("tools is not an array".to_string()))?;
    let mut tools = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let tool: ToolSpec = serde_json::from_value(item.clone())
            .map_err(|e| CorpusError::MalformedJson(format!("tools[{i}]: {e}")))?;
        tools.push(tool);
    }
    Ok(tools)
}

/// Canonical JSON text of a sample: sorted keys, no insignificant whitespace,
/// inline arrays. `parse_sample(serialize_sample(s)) == s`.
pub fn serialize_sample(sample: &Sample) -> String {
    canonical_json(sample)
}

// ---------------------------------------------------------------------------
// Call validation against a tool spec
// ---------------------------------------------------------------------------

/// One schema violation found by [`validate_call`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    MissingRequired,
    UndeclaredParameter,
    KindMismatch,
    EnumViolation,
}

/// Result of checking a call against its tool's schema. Empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// External report form: a JSON array of {code, path, message}.
    pub fn to_json(&self) -> String {
        canonical_json(&self.violations)
    }
}

/// Check a call against its tool spec: missing required parameters,
/// undeclared parameters, kind mismatches, and enum violations.
pub fn validate_call(call: &ToolCall, spec: &ToolSpec) -> Result<ValidationReport, CorpusError> {
    if call.name != spec.name {
        return Err(CorpusError::NameMismatch {
            expected: spec.name.clone(),
            got: call.name.clone(),
        });
    }
    let mut report = ValidationReport::default();
    for (param, pspec) in &spec.parameters {
        if pspec.required && !call.arguments.contains_key(param) {
            report.violations.push(Violation {
                code: ViolationCode::MissingRequired,
                path: format!("arguments.{param}"),
                message: format!("required parameter {param:?} is missing"),
            });
        }
    }
    for (param, value) in &call.arguments {
        let Some(pspec) = spec.parameters.get(param) else {
            report.violations.push(Violation {
                code: ViolationCode::UndeclaredParameter,
                path: format!("arguments.{param}"),
                message: format!("parameter {param:?} is not declared by tool {:?}", spec.name),
            });
            continue;
        };
        check_kind(param, value, pspec, &mut report);
    }
    Ok(report)
}

fn check_kind(param: &str, value: &ScalarValue, pspec: &ParamSpec, report: &mut ValidationReport) {
    let path = format!("arguments.{param}");
    let mismatch = |report: &mut ValidationReport, expected: &str| {
        report.violations.push(Violation {
            code: ViolationCode::KindMismatch,
            path: path.clone(),
            message: format!("expected {expected}, got {value:?}"),
        });
    };
    match pspec.kind {
        ParamKind::String => {
            if !matches!(value, ScalarValue::String(_)) {
                mismatch(report, "string");
            }
        }
        ParamKind::Integer => match value {
            ScalarValue::Integer(_) => {}
            // An integral float is an integer as far as JSON writers go.
            ScalarValue::Float(f) if f.fract() == 0.0 => {}
            _ => mismatch(report, "integer"),
        },
        ParamKind::Float => {
            if !matches!(value, ScalarValue::Float(_) | ScalarValue::Integer(_)) {
                mismatch(report, "float");
            }
        }
        ParamKind::Boolean => {
            if !matches!(value, ScalarValue::Bool(_)) {
                mismatch(report, "boolean");
            }
        }
        ParamKind::Enum => match value {
            ScalarValue::String(s) => {
                let allowed = pspec.allowed.as_deref().unwrap_or(&[]);
                if !allowed.iter().any(|a| a == s) {
                    report.violations.push(Violation {
                        code: ViolationCode::EnumViolation,
                        path,
                        message: format!("{s:?} is not one of the allowed values"),
                    });
                }
            }
            _ => mismatch(report, "enum string"),
        },
    }
}

// ---------------------------------------------------------------------------
// Buffer
// ---------------------------------------------------------------------------

/// The deduplicated corpus: samples keyed by content id.
#[derive(Debug, Clone, Default)]
pub struct Buffer {
    samples: Vec<Sample>,
    index: HashMap<String, usize>,
}

impl Buffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build a buffer from samples, dropping id duplicates (first wins).
    pub fn from_samples(samples: impl IntoIterator<Item = Sample>) -> Self {
        let mut buffer = Buffer::new();
        for sample in samples {
            if !buffer.index.contains_key(&sample.id) {
                buffer.index.insert(sample.id.clone(), buffer.samples.len());
                buffer.samples.push(sample);
            }
        }
        buffer
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.index.get(id).map(|&i| &self.samples[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Parse a JSONL corpus; errors carry the 1-based line number.
    pub fn from_jsonl_str(text: &str) -> Result<Self, CorpusError> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let sample = parse_sample(line).map_err(|e| CorpusError::Line {
                line: i + 1,
                source: Box::new(e),
            })?;
            samples.push(sample);
        }
        Ok(Buffer::from_samples(samples))
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let file = std::fs::File::open(path)?;
        let mut samples = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let sample = parse_sample(&line).map_err(|e| CorpusError::Line {
                line: i + 1,
                source: Box::new(e),
            })?;
            samples.push(sample);
        }
        Ok(Buffer::from_samples(samples))
    }

    /// Canonical JSONL text, one sample per line.
    pub fn to_jsonl_string(&self) -> String {
        let mut out = String::new();
        for sample in &self.samples {
            out.push_str(&serialize_sample(sample));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_jsonl_string().as_bytes())?;
        Ok(())
    }
}

/// Union of two buffers keyed by sample id; on collision the left operand's
/// copy wins. Associative and idempotent on id sets.
pub fn merge(a: &Buffer, b: &Buffer) -> Buffer {
    Buffer::from_samples(a.iter().chain(b.iter()).cloned())
}
