//! Rule-based rewards for tool-call outputs, the confusion-matrix F1
//! evaluation metric, group-normalized advantage math for GRPO-style
//! training, and SFT record assembly under prompt isolation.
//!
//! All functions are pure. Reward components are decomposed so that tool
//! selection (F1 over names), parameter-key retrieval (F1 over key sets),
//! and value accuracy (exact match) are each scored once and never
//! double-penalized.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{canonical_json, parse_call_array, Sample, ToolCall};

#[derive(Debug, thiserror::Error)]
pub enum ScoringError {
    #[error("advantage group is empty")]
    EmptyGroup,
    #[error("prediction/reference length mismatch: {predictions} vs {references}")]
    LengthMismatch { predictions: usize, references: usize },
    #[error("reasoning mode requires a plan text")]
    MissingPlan,
    #[error("plan text may not contain the closing plan tag")]
    InvalidPlan,
}

/// Output contract of the trained model: reasoning mode emits a `<plan>`
/// block before the tool call, direct mode emits the tool call alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    Reasoning,
    Direct,
}

/// Per-sample reward decomposition. `correctness = f1_tool + f1_param + em`;
/// the total gates correctness on the binary format reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: u8,
    pub f1_tool: f64,
    pub f1_param: f64,
    pub em: f64,
    pub correctness: f64,
    pub total: f64,
}

/// How format and correctness combine into the total.
#[derive(Debug, Clone, Copy)]
pub struct RewardOptions {
    /// When true (default), total = 0 unless the format reward is 1;
    /// otherwise total = format + correctness unconditionally.
    pub gate_on_format: bool,
}

impl Default for RewardOptions {
    fn default() -> Self {
        Self { gate_on_format: true }
    }
}

// ---------------------------------------------------------------------------
// Reward components
// ---------------------------------------------------------------------------

fn f1_from_counts(intersection: f64, gen_total: f64, ref_total: f64) -> f64 {
    if gen_total == 0.0 && ref_total == 0.0 {
        return 1.0;
    }
    if gen_total == 0.0 || ref_total == 0.0 {
        return 0.0;
    }
    let precision = intersection / gen_total;
    let recall = intersection / ref_total;
    if precision + recall == 0.0 {
        return 0.0;
    }
    2.0 * precision * recall / (precision + recall)
}

/// F1 over the multisets of invoked tool names. Argument quality is scored
/// separately by [`f1_param`] and [`em_value`].
pub fn f1_tool(gen: &[ToolCall], reference: &[ToolCall]) -> f64 {
    let mut gen_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for call in gen {
        *gen_counts.entry(call.name.as_str()).or_default() += 1;
    }
    let mut intersection = 0usize;
    for call in reference {
        if let Some(n) = gen_counts.get_mut(call.name.as_str()) {
            if *n > 0 {
                *n -= 1;
                intersection += 1;
            }
        }
    }
    f1_from_counts(intersection as f64, gen.len() as f64, reference.len() as f64)
}

/// Pair calls greedily by name in reference order: reference call i takes the
/// first unmatched generated call with the same name. Returns, per reference
/// index, the paired generated index.
fn pair_calls(gen: &[ToolCall], reference: &[ToolCall]) -> Vec<Option<usize>> {
    let mut used = vec![false; gen.len()];
    reference
        .iter()
        .map(|r| {
            let hit = gen
                .iter()
                .enumerate()
                .find(|(j, g)| !used[*j] && g.name == r.name)
                .map(|(j, _)| j);
            if let Some(j) = hit {
                used[j] = true;
            }
            hit
        })
        .collect()
}

/// Mean per-reference-call F1 over parameter-key sets of paired calls.
/// Unpaired reference calls contribute 0.
pub fn f1_param(gen: &[ToolCall], reference: &[ToolCall]) -> f64 {
    if reference.is_empty() {
        return if gen.is_empty() { 1.0 } else { 0.0 };
    }
    let pairs = pair_calls(gen, reference);
    let mut sum = 0.0;
    for (r, paired) in reference.iter().zip(&pairs) {
        let Some(g_idx) = paired else { continue };
        let g = &gen[*g_idx];
        let intersection = r.arguments.keys().filter(|k| g.arguments.contains_key(*k)).count();
        sum += f1_from_counts(
            intersection as f64,
            g.arguments.len() as f64,
            r.arguments.len() as f64,
        );
    }
    sum / reference.len() as f64
}

/// Fraction of reference parameter keys whose paired generated value matches
/// exactly after normalization (whitespace-trimmed, case-sensitive strings;
/// numbers compared numerically, so "7" == 7.0).
pub fn em_value(gen: &[ToolCall], reference: &[ToolCall]) -> f64 {
    let total_keys: usize = reference.iter().map(|r| r.arguments.len()).sum();
    if total_keys == 0 {
        return 1.0;
    }
    let pairs = pair_calls(gen, reference);
    let mut matched = 0usize;
    for (r, paired) in reference.iter().zip(&pairs) {
        let Some(g_idx) = paired else { continue };
        let g = &gen[*g_idx];
        for (key, ref_value) in &r.arguments {
            if let Some(gen_value) = g.arguments.get(key) {
                if values_match(gen_value, ref_value) {
                    matched += 1;
                }
            }
        }
    }
    matched as f64 / total_keys as f64
}

fn values_match(a: &crate::corpus::ScalarValue, b: &crate::corpus::ScalarValue) -> bool {
    match (a.as_number(), b.as_number()) {
        (Some(x), Some(y)) => x == y,
        _ => a.normalized() == b.normalized(),
    }
}

// ---------------------------------------------------------------------------
// Format reward and output parsing
// ---------------------------------------------------------------------------

const PLAN_OPEN: &str = "<plan>";
const PLAN_CLOSE: &str = "</plan>";
const CALL_OPEN: &str = "<tool_call>";
const CALL_CLOSE: &str = "</tool_call>";

/// Strict structural check of a raw model output: 1 iff the text is exactly
/// the tag layout of the given mode and the tool_call body parses as a JSON
/// array of `{name, arguments}` with scalar arguments.
pub fn format_reward(raw: &str, mode: OutputMode) -> u8 {
    if parse_strict(raw, mode).is_some() {
        1
    } else {
        0
    }
}

fn parse_strict(raw: &str, mode: OutputMode) -> Option<Vec<ToolCall>> {
    let text = raw.trim();
    let rest = match mode {
        OutputMode::Reasoning => {
            let after_open = text.strip_prefix(PLAN_OPEN)?;
            let close = after_open.find(PLAN_CLOSE)?;
            after_open[close + PLAN_CLOSE.len()..].trim_start()
        }
        OutputMode::Direct => text,
    };
    let body = rest.strip_prefix(CALL_OPEN)?.strip_suffix(CALL_CLOSE)?;
    if body.contains(CALL_OPEN) {
        return None;
    }
    let value: serde_json::Value = serde_json::from_str(body).ok()?;
    parse_call_array(&value, "tool_call").ok()
}

/// Best-effort extraction of the generated call list from raw output: strict
/// parse first, then the first `<tool_call>` block anywhere in the text.
/// Returns None when nothing parseable is present.
pub fn extract_calls(raw: &str, mode: OutputMode) -> Option<Vec<ToolCall>> {
    if let Some(calls) = parse_strict(raw, mode) {
        return Some(calls);
    }
    let start = raw.find(CALL_OPEN)?;
    let after = &raw[start + CALL_OPEN.len()..];
    let end = after.find(CALL_CLOSE)?;
    let value: serde_json::Value = serde_json::from_str(&after[..end]).ok()?;
    parse_call_array(&value, "tool_call").ok()
}

/// Score one raw output against the reference call list with default gating.
pub fn reward(raw: &str, mode: OutputMode, reference: &[ToolCall]) -> RewardBreakdown {
    reward_with(raw, mode, reference, RewardOptions::default())
}

pub fn reward_with(
    raw: &str,
    mode: OutputMode,
    reference: &[ToolCall],
    options: RewardOptions,
) -> RewardBreakdown {
    let format = format_reward(raw, mode);
    let gen = extract_calls(raw, mode).unwrap_or_default();
    let f1_t = f1_tool(&gen, reference);
    let f1_p = f1_param(&gen, reference);
    let em = em_value(&gen, reference);
    let correctness = f1_t + f1_p + em;
    let total = if options.gate_on_format && format == 0 {
        0.0
    } else {
        f64::from(format) + correctness
    };
    RewardBreakdown { format, f1_tool: f1_t, f1_param: f1_p, em, correctness, total }
}

// ---------------------------------------------------------------------------
// GRPO math
// ---------------------------------------------------------------------------

/// Group-normalized advantages: (r - mean) / population std. A zero-variance
/// group yields all-zero advantages.
pub fn grpo_advantages(rewards: &[f64]) -> Result<Vec<f64>, ScoringError> {
    if rewards.is_empty() {
        return Err(ScoringError::EmptyGroup);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = variance.sqrt();
    if std == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Clipped policy-ratio surrogate: min(ratio * A, clip(ratio, 1-eps, 1+eps) * A).
/// The KL penalty term requires model distributions and lives in the trainer.
pub fn grpo_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    debug_assert!(ratio > 0.0, "probability ratio must be positive");
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

// ---------------------------------------------------------------------------
// Tool-selection evaluation (confusion-matrix macro F1)
// ---------------------------------------------------------------------------

/// Class label for reference slots with no remaining prediction (and
/// vice versa) when call lists differ in length.
pub const NO_CALL_CLASS: &str = "<no-call>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Confusion matrix over tool-name classes with per-class and macro F1.
/// Rows are reference classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
}

impl EvalReport {
    pub fn row_sum(&self, class: &str) -> u64 {
        match self.classes.iter().position(|c| c == class) {
            Some(i) => self.confusion[i].iter().sum(),
            None => 0,
        }
    }
}

/// Evaluate tool selection as multi-class classification. Each
/// (prediction, reference) pair contributes its tool-name occurrences with
/// greedy name alignment: matched names land on the diagonal, leftover
/// reference names pair against leftover predictions in order, and the
/// shorter side pads with [`NO_CALL_CLASS`]. Macro F1 averages classes with
/// nonzero reference support.
pub fn selection_f1(
    predictions: &[Vec<ToolCall>],
    references: &[Vec<ToolCall>],
) -> Result<EvalReport, ScoringError> {
    if predictions.len() != references.len() {
        return Err(ScoringError::LengthMismatch {
            predictions: predictions.len(),
            references: references.len(),
        });
    }

    let mut classes: Vec<String> = Vec::new();
    let mut class_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut cells: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut index_of = |name: &str, classes: &mut Vec<String>| -> usize {
        if let Some(&i) = class_index.get(name) {
            return i;
        }
        let i = classes.len();
        classes.push(name.to_string());
        class_index.insert(name.to_string(), i);
        i
    };

    for (pred, reference) in predictions.iter().zip(references) {
        let pred_names: Vec<&str> = pred.iter().map(|c| c.name.as_str()).collect();
        let ref_names: Vec<&str> = reference.iter().map(|c| c.name.as_str()).collect();

        let mut pred_used = vec![false; pred_names.len()];
        let mut ref_used = vec![false; ref_names.len()];
        for (ri, rname) in ref_names.iter().enumerate() {
            if let Some(pi) = pred_names
                .iter()
                .enumerate()
                .position(|(pi, pname)| !pred_used[pi] && pname == rname)
            {
                pred_used[pi] = true;
                ref_used[ri] = true;
                let c = index_of(rname, &mut classes);
                *cells.entry((c, c)).or_default() += 1;
            }
        }

        let leftover_refs: Vec<&str> =
            ref_names.iter().enumerate().filter(|(i, _)| !ref_used[*i]).map(|(_, n)| *n).collect();
        let leftover_preds: Vec<&str> = pred_names
            .iter()
            .enumerate()
            .filter(|(i, _)| !pred_used[*i])
            .map(|(_, n)| *n)
            .collect();

        let rows = leftover_refs.len().max(leftover_preds.len()).max(
            // Both lists empty: one correct "predicted nothing" event.
            usize::from(ref_names.is_empty() && pred_names.is_empty()),
        );
        for i in 0..rows {
            let row_name = leftover_refs.get(i).copied().unwrap_or(NO_CALL_CLASS);
            let col_name = leftover_preds.get(i).copied().unwrap_or(NO_CALL_CLASS);
            let r = index_of(row_name, &mut classes);
            let c = index_of(col_name, &mut classes);
            *cells.entry((r, c)).or_default() += 1;
        }
    }

    let n = classes.len();
    let mut confusion = vec![vec![0u64; n]; n];
    for ((r, c), count) in cells {
        confusion[r][c] = count;
    }

    let mut per_class = Vec::with_capacity(n);
    let mut macro_sum = 0.0;
    let mut macro_n = 0usize;
    for i in 0..n {
        let support: u64 = confusion[i].iter().sum();
        let col_total: u64 = (0..n).map(|r| confusion[r][i]).sum();
        let tp = confusion[i][i];
        let precision = if col_total > 0 { tp as f64 / col_total as f64 } else { 0.0 };
        let recall = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if support > 0 {
            macro_sum += f1;
            macro_n += 1;
        }
        per_class.push(ClassMetrics { class: classes[i].clone(), support, precision, recall, f1 });
    }
    let macro_f1 = if macro_n > 0 { macro_sum / macro_n as f64 } else { 1.0 };

    Ok(EvalReport { classes, confusion, per_class, macro_f1 })
}

// ---------------------------------------------------------------------------
// SFT assembly (prompt isolation)
// ---------------------------------------------------------------------------

/// System prompt eliciting a reasoning block before the tool call.
pub const SYSTEM_PROMPT_REASONING: &str = r#"## Role:
You are a helpful AI assistant with access to various tools.

## Requirement:
* Provide your reasoning process in natural language.
* Output the tool_call in the specified json format.

## Output format:
"""
<plan> [Your detailed reasoning]</plan>
<tool_call>[The actual function call]</tool_call>
"""
"#;

/// System prompt eliciting the tool call directly, no reasoning tokens.
pub const SYSTEM_PROMPT_DIRECT: &str = r#"## Role:
You are a helpful AI assistant with access to various tools.

## Requirement:
* Do not provide your reasoning process.
* Directly output the tool_call in the specified json format.

## Output format:
"""
<tool_call>[The actual function call]</tool_call>
"""
"#;

/// One supervised training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub system: String,
    pub user: String,
    pub target: String,
}

impl SftRecord {
    pub fn to_json(&self) -> String {
        canonical_json(self)
    }
}

/// Assemble a training record for one sample under prompt isolation. The
/// target always satisfies `format_reward(target, mode) == 1`.
pub fn assemble_sft_record(
    sample: &Sample,
    mode: OutputMode,
    plan: Option<&str>,
) -> Result<SftRecord, ScoringError> {
    let calls_json = canonical_json(&sample.answers);
    let (system, target) = match mode {
        OutputMode::Reasoning => {
            let plan = plan.ok_or(ScoringError::MissingPlan)?;
            if plan.contains(PLAN_CLOSE) {
                return Err(ScoringError::InvalidPlan);
            }
            (
                SYSTEM_PROMPT_REASONING,
                format!("{PLAN_OPEN}{plan}{PLAN_CLOSE}{CALL_OPEN}{calls_json}{CALL_CLOSE}"),
            )
        }
        OutputMode::Direct => {
            (SYSTEM_PROMPT_DIRECT, format!("{CALL_OPEN}{calls_json}{CALL_CLOSE}"))
        }
    };
    let user = format!(
        "## Tools:\n{}\n\n## Query:\n{}",
        canonical_json(&sample.tools),
        sample.query
    );
    Ok(SftRecord { system: system.to_string(), user, target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Origin, ScalarValue, ToolSpec};

    fn call(name: &str, args: &[(&str, &str)]) -> ToolCall {
        let mut c = ToolCall::new(name);
        for (k, v) in args {
            c = c.with_arg(*k, ScalarValue::String(v.to_string()));
        }
        c
    }

    #[test]
    fn f1_tool_identity_and_half() {
        let ab = vec![call("A", &[]), call("B", &[])];
        assert_eq!(f1_tool(&ab, &ab), 1.0);
        let ac = vec![call("A", &[]), call("C", &[])];
        assert!((f1_tool(&ab, &ac) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn f1_tool_empty_conventions() {
        let a = vec![call("A", &[])];
        assert_eq!(f1_tool(&[], &a), 0.0);
        assert_eq!(f1_tool(&a, &[]), 0.0);
        assert_eq!(f1_tool(&[], &[]), 1.0);
    }

    #[test]
    fn f1_tool_is_order_insensitive() {
        let ab = vec![call("A", &[]), call("B", &[])];
        let ba = vec![call("B", &[]), call("A", &[])];
        let reference = vec![call("A", &[]), call("C", &[])];
        assert_eq!(f1_tool(&ab, &reference), f1_tool(&ba, &reference));
    }

    #[test]
    fn f1_param_key_superset_gives_two_thirds() {
        let gen = vec![call("f", &[("symbol", "700"), ("period", "1d")])];
        let reference = vec![call("f", &[("symbol", "700")])];
        assert!((f1_param(&gen, &reference) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn f1_param_identity_and_missing_call() {
        let two = vec![call("f", &[("a", "1")]), call("g", &[("b", "2")])];
        assert_eq!(f1_param(&two, &two), 1.0);
        let one = vec![call("f", &[("a", "1")])];
        assert!((f1_param(&one, &two) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn f1_param_empty_reference_conventions() {
        assert_eq!(f1_param(&[], &[]), 1.0);
        assert_eq!(f1_param(&[call("f", &[])], &[]), 0.0);
    }

    #[test]
    fn em_counts_matching_keys() {
        let gen = vec![
            call("f", &[("a", "1"), ("b", "wrong")]),
            call("g", &[("c", "3"), ("d", "nope")]),
        ];
        let reference = vec![
            call("f", &[("a", "1"), ("b", "2")]),
            call("g", &[("c", "3"), ("d", "4")]),
        ];
        assert!((em_value(&gen, &reference) - 0.5).abs() < 1e-12);
        assert_eq!(em_value(&reference, &reference), 1.0);
    }

    #[test]
    fn em_is_case_sensitive_but_numeric_tolerant() {
        let gen = vec![call("f", &[("name", "tencent")])];
        let reference = vec![call("f", &[("name", "Tencent")])];
        assert_eq!(em_value(&gen, &reference), 0.0);

        let gen_num = vec![ToolCall::new("f").with_arg("n", ScalarValue::String("7".into()))];
        let ref_num = vec![ToolCall::new("f").with_arg("n", ScalarValue::Float(7.0))];
        assert_eq!(em_value(&gen_num, &ref_num), 1.0);
    }

    #[test]
    fn em_trims_whitespace() {
        let gen = vec![call("f", &[("name", " Tencent ")])];
        let reference = vec![call("f", &[("name", "Tencent")])];
        assert_eq!(em_value(&gen, &reference), 1.0);
    }

    #[test]
    fn format_reward_reasoning_cases() {
        assert_eq!(format_reward("<plan>x</plan><tool_call>[]</tool_call>", OutputMode::Reasoning), 1);
        assert_eq!(format_reward("<tool_call>[]</tool_call>", OutputMode::Reasoning), 0);
        assert_eq!(
            format_reward("<plan>x</plan><tool_call>[]</tool_call> trailing", OutputMode::Reasoning),
            0
        );
    }

    #[test]
    fn format_reward_direct_cases() {
        assert_eq!(
            format_reward(
                r#"<tool_call>[{"name":"f","arguments":{}}]</tool_call>"#,
                OutputMode::Direct
            ),
            1
        );
        assert_eq!(
            format_reward("<plan>x</plan><tool_call>[]</tool_call>", OutputMode::Direct),
            0
        );
        assert_eq!(format_reward("<tool_call>not json</tool_call>", OutputMode::Direct), 0);
        assert_eq!(
            format_reward(r#"<tool_call>{"name":"f"}</tool_call>"#, OutputMode::Direct),
            0
        );
    }

    #[test]
    fn reward_perfect_output() {
        let reference = vec![call("f", &[("a", "1")])];
        let raw = format!("<tool_call>{}</tool_call>", canonical_json(&reference));
        let b = reward(&raw, OutputMode::Direct, &reference);
        assert_eq!(b.format, 1);
        assert_eq!(b.f1_tool, 1.0);
        assert_eq!(b.f1_param, 1.0);
        assert_eq!(b.em, 1.0);
        assert_eq!(b.correctness, 3.0);
        assert_eq!(b.total, 4.0);
    }

    #[test]
    fn reward_unparseable_output_is_all_zero() {
        let reference = vec![call("f", &[("a", "1")])];
        let b = reward("rambling prose with no tags", OutputMode::Direct, &reference);
        assert_eq!(
            (b.format, b.f1_tool, b.f1_param, b.em, b.correctness, b.total),
            (0, 0.0, 0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn reward_composes_component_scores() {
        let reference = vec![
            call("f", &[("a", "1"), ("b", "2")]),
            call("g", &[("c", "3"), ("d", "4")]),
        ];
        let gen = vec![
            call("f", &[("a", "1"), ("b", "2")]),
            call("g", &[("c", "3"), ("d", "wrong")]),
        ];
        let raw = format!("<tool_call>{}</tool_call>", canonical_json(&gen));
        let b = reward(&raw, OutputMode::Direct, &reference);
        assert_eq!(b.f1_tool, 1.0);
        assert_eq!(b.f1_param, 1.0);
        assert!((b.em - 0.75).abs() < 1e-12);
        assert!((b.total - (1.0 + 2.75)).abs() < 1e-12);
    }

    #[test]
    fn reward_gating_is_configurable() {
        let reference = vec![call("f", &[])];
        let raw = format!("prose <tool_call>{}</tool_call>", canonical_json(&reference));
        let gated = reward(&raw, OutputMode::Direct, &reference);
        assert_eq!(gated.total, 0.0);
        let ungated =
            reward_with(&raw, OutputMode::Direct, &reference, RewardOptions { gate_on_format: false });
        assert!((ungated.total - 3.0).abs() < 1e-12);
    }

    #[test]
    fn advantages_symmetric_pair_and_degenerate() {
        assert_eq!(grpo_advantages(&[2.0, 0.0]).unwrap(), vec![1.0, -1.0]);
        assert_eq!(grpo_advantages(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0, 0.0, 0.0]);
        assert!(matches!(grpo_advantages(&[]), Err(ScoringError::EmptyGroup)));
    }

    #[test]
    fn advantages_match_hand_fixture() {
        let a = grpo_advantages(&[3.0, 1.0, 2.0]).unwrap();
        assert!((a[0] - 1.2247).abs() < 1e-4);
        assert!((a[1] + 1.2247).abs() < 1e-4);
        assert!(a[2].abs() < 1e-9);
    }

    #[test]
    fn advantages_sum_to_zero_with_unit_variance() {
        let rewards = [0.3, 1.9, 2.2, 0.0, 4.0, 4.0, 1.1];
        let a = grpo_advantages(&rewards).unwrap();
        let sum: f64 = a.iter().sum();
        assert!(sum.abs() < 1e-9);
        let var: f64 = a.iter().map(|x| x * x).sum::<f64>() / a.len() as f64;
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn surrogate_identity_and_clipping() {
        for advantage in [-2.0, -0.5, 0.0, 0.7, 3.0] {
            assert_eq!(grpo_surrogate(1.0, advantage, 0.2), advantage);
        }
        assert!((grpo_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((grpo_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-12);
    }

    #[test]
    fn selection_f1_identity_and_all_empty_predictions() {
        let refs = vec![vec![call("A", &[])], vec![call("B", &[])]];
        let report = selection_f1(&refs, &refs).unwrap();
        assert_eq!(report.macro_f1, 1.0);

        let empty_preds = vec![vec![], vec![]];
        let report = selection_f1(&empty_preds, &refs).unwrap();
        assert_eq!(report.macro_f1, 0.0);
    }

    #[test]
    fn selection_f1_two_class_hand_fixture() {
        let refs = vec![
            vec![call("A", &[])],
            vec![call("A", &[])],
            vec![call("B", &[])],
            vec![call("B", &[])],
        ];
        let preds = vec![
            vec![call("A", &[])],
            vec![call("B", &[])],
            vec![call("B", &[])],
            vec![call("B", &[])],
        ];
        let report = selection_f1(&preds, &refs).unwrap();
        let f1_of = |name: &str| {
            report.per_class.iter().find(|m| m.class == name).map(|m| m.f1).unwrap()
        };
        assert!((f1_of("A") - 2.0 / 3.0).abs() < 1e-9);
        assert!((f1_of("B") - 0.8).abs() < 1e-9);
        assert!((report.macro_f1 - 0.7333).abs() < 1e-4);
        assert_eq!(report.row_sum("A"), 2);
        assert_eq!(report.row_sum("B"), 2);
    }

    #[test]
    fn selection_f1_length_mismatch() {
        assert!(matches!(
            selection_f1(&[vec![]], &[]),
            Err(ScoringError::LengthMismatch { .. })
        ));
    }

    fn sample_with_one_call() -> Sample {
        let tool = ToolSpec {
            name: "f".to_string(),
            description: String::new(),
            parameters: Default::default(),
        };
        Sample::new("what is f", vec![ToolCall::new("f")], vec![tool], Origin::Seed).unwrap()
    }

    #[test]
    fn sft_direct_record_is_a_lone_call_block() {
        let record = assemble_sft_record(&sample_with_one_call(), OutputMode::Direct, None).unwrap();
        assert!(record.target.starts_with("<tool_call>"));
        assert!(record.target.ends_with("</tool_call>"));
        assert_eq!(format_reward(&record.target, OutputMode::Direct), 1);
    }

    #[test]
    fn sft_reasoning_record_embeds_plan() {
        let record =
            assemble_sft_record(&sample_with_one_call(), OutputMode::Reasoning, Some("p")).unwrap();
        assert!(record.target.starts_with("<plan>p</plan><tool_call>"));
        assert_eq!(format_reward(&record.target, OutputMode::Reasoning), 1);
        assert!(matches!(
            assemble_sft_record(&sample_with_one_call(), OutputMode::Reasoning, None),
            Err(ScoringError::MissingPlan)
        ));
    }

    #[test]
    fn sft_records_self_score_format_one() {
        let sample = sample_with_one_call();
        for (mode, plan) in [(OutputMode::Direct, None), (OutputMode::Reasoning, Some("think"))] {
            let record = assemble_sft_record(&sample, mode, plan).unwrap();
            let b = reward(&record.target, mode, &sample.answers);
            assert_eq!(b.format, 1);
            assert_eq!(b.total, 4.0);
        }
    }
}
