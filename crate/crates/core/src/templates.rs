//! Prompt templates and placeholder substitution.
//!
//! Three templates drive the pipeline's model calls: the consistency checker,
//! the few-shot call generator, and the multi-round counterfactual generator.
//! They ship embedded in the binary and can be overridden per file from a
//! templates directory. Placeholder syntax is kept exactly as the templates
//! spell it: `{{NAME}}` in the checker/few-shot prompts, `{name}` (including
//! tokens like `{initial_state['global_entropy']:.4f}`) in the counterfactual
//! prompt, so the files stay verbatim.

use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("unresolved placeholders after render: {0:?}")]
    MissingPlaceholderData(Vec<String>),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub const CONSISTENCY_CHECKER: &str = include_str!("../templates/consistency_checker.txt");
pub const FEWSHOT_GENERATOR: &str = include_str!("../templates/fewshot_generator.txt");
pub const COUNTERFACTUAL_GENERATION: &str =
    include_str!("../templates/counterfactual_generation.txt");

const CHECKER_FILE: &str = "consistency_checker.txt";
const FEWSHOT_FILE: &str = "fewshot_generator.txt";
const COUNTERFACTUAL_FILE: &str = "counterfactual_generation.txt";

/// The pipeline's prompt templates.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub consistency_checker: String,
    pub fewshot_generator: String,
    pub counterfactual_generation: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self {
            consistency_checker: CONSISTENCY_CHECKER.to_string(),
            fewshot_generator: FEWSHOT_GENERATOR.to_string(),
            counterfactual_generation: COUNTERFACTUAL_GENERATION.to_string(),
        }
    }

    /// Load overrides from a directory; files not present fall back to the
    /// builtin text.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let dir = dir.as_ref();
        let read = |file: &str, builtin: &str| -> Result<String, TemplateError> {
            let path = dir.join(file);
            if path.exists() {
                Ok(std::fs::read_to_string(path)?)
            } else {
                Ok(builtin.to_string())
            }
        };
        Ok(Self {
            consistency_checker: read(CHECKER_FILE, CONSISTENCY_CHECKER)?,
            fewshot_generator: read(FEWSHOT_FILE, FEWSHOT_GENERATOR)?,
            counterfactual_generation: read(COUNTERFACTUAL_FILE, COUNTERFACTUAL_GENERATION)?,
        })
    }

    /// Write the builtin templates into a directory (operator convenience for
    /// starting an override set).
    pub fn write_builtin(dir: impl AsRef<Path>) -> Result<(), TemplateError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(CHECKER_FILE), CONSISTENCY_CHECKER)?;
        std::fs::write(dir.join(FEWSHOT_FILE), FEWSHOT_GENERATOR)?;
        std::fs::write(dir.join(COUNTERFACTUAL_FILE), COUNTERFACTUAL_GENERATION)?;
        Ok(())
    }
}

/// Substitute placeholders by exact token, both `{{key}}` and `{key}` forms,
/// then fail if anything placeholder-shaped survives.
pub fn render(template: &str, vars: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
    let mut text = template.to_string();
    for (key, value) in vars {
        text = text.replace(&format!("{{{{{key}}}}}"), value);
        text = text.replace(&format!("{{{key}}}"), value);
    }
    let leftover = unresolved_placeholders(&text);
    if leftover.is_empty() {
        Ok(text)
    } else {
        Err(TemplateError::MissingPlaceholderData(leftover))
    }
}

/// Scan for placeholder-shaped tokens: `{{...}}`, or `{...}` whose body
/// starts with a letter or underscore and contains no nested braces. JSON
/// literals in prompt text never match because their `{` is followed by a
/// quote or newline.
pub fn unresolved_placeholders(text: &str) -> Vec<String> {
    let bytes = text.as_bytes();
    let mut found = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'{' {
            i += 1;
            continue;
        }
        if i + 1 < bytes.len() && bytes[i + 1] == b'{' {
            if let Some(end) = text[i + 2..].find("}}") {
                let inner = &text[i + 2..i + 2 + end];
                if !inner.is_empty() && !inner.contains('{') && !inner.contains('}') {
                    found.push(format!("{{{{{inner}}}}}"));
                    i += 2 + end + 2;
                    continue;
                }
            }
            i += 2;
            continue;
        }
        let starts_like_name = bytes
            .get(i + 1)
            .map(|b| b.is_ascii_alphabetic() || *b == b'_')
            .unwrap_or(false);
        if starts_like_name {
            if let Some(end) = text[i + 1..].find(['{', '}']) {
                if bytes[i + 1 + end] == b'}' {
                    let inner = &text[i + 1..i + 1 + end];
                    found.push(format!("{{{inner}}}"));
                    i += 1 + end + 1;
                    continue;
                }
            }
        }
        i += 1;
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(pairs: &[(&'static str, &str)]) -> BTreeMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn renders_both_placeholder_syntaxes() {
        let out = render(
            "a {{X}} b {y} c",
            &vars(&[("X", "one"), ("y", "two")]),
        )
        .unwrap();
        assert_eq!(out, "a one b two c");
    }

    #[test]
    fn missing_data_is_an_error_listing_tokens() {
        match render("{{X}} and {y}", &vars(&[("X", "one")])) {
            Err(TemplateError::MissingPlaceholderData(tokens)) => {
                assert_eq!(tokens, vec!["{y}".to_string()]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn json_braces_are_not_placeholders() {
        let text = r#"[{
    "name": "f", "arguments": {"a": "b"}
}] and {"quoted": 1}"#;
        assert!(unresolved_placeholders(text).is_empty());
    }

    #[test]
    fn funky_tokens_are_detected_and_replaced() {
        let template = "E: {initial_state['global_entropy']:.4f} after {step-1} rounds";
        let found = unresolved_placeholders(template);
        assert_eq!(found.len(), 2);
        let out = render(
            template,
            &vars(&[("initial_state['global_entropy']:.4f", "3.0000"), ("step-1", "0")]),
        )
        .unwrap();
        assert_eq!(out, "E: 3.0000 after 0 rounds");
    }

    #[test]
    fn builtin_templates_declare_expected_placeholders() {
        let checker = unresolved_placeholders(CONSISTENCY_CHECKER);
        for token in ["{{query}}", "{{tools}}", "{{tool_call}}"] {
            assert!(checker.contains(&token.to_string()), "missing {token}");
        }
        let fewshot = unresolved_placeholders(FEWSHOT_GENERATOR);
        for token in ["{{FEW_SHOT_EXAMPLES}}", "{{CURRENT_QUERY}}", "{{CURRENT_TOOLSET}}"] {
            assert!(fewshot.contains(&token.to_string()), "missing {token}");
        }
        let counterfactual = unresolved_placeholders(COUNTERFACTUAL_GENERATION);
        for token in [
            "{step}",
            "{step-1}",
            "{tool_param}",
            "{tool_param.split('.')[-1]}",
            "{initial_state['global_entropy']:.4f}",
            "{current_state['entropy_ratio'] - initial_state['entropy_ratio']:+.4f}",
            "{blind_entropy_ration_threshold}",
            "{history_desc}",
            "{initial_global_dist_desc}",
            "{current_local_dist_desc}",
            "{instruction}",
            "{input_text}",
            "{user_query}",
            "{tool_call}",
            "{stable_params_desc}",
        ] {
            assert!(counterfactual.contains(&token.to_string()), "missing {token}");
        }
    }

    #[test]
    fn load_dir_prefers_overrides_and_falls_back() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("consistency_checker.txt"), "custom {{query}}").unwrap();
        let set = TemplateSet::load_dir(dir.path()).unwrap();
        assert_eq!(set.consistency_checker, "custom {{query}}");
        assert_eq!(set.fewshot_generator, FEWSHOT_GENERATOR);
    }
}
