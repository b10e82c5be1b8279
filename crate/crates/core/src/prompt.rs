//! Prompt templates and reply scraping shared by localization and inference.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::retrieve::ExampleEntry;

pub const DEFAULT_LOCALIZE_TEMPLATE: &str = include_str!("../prompts/localize.txt");
pub const DEFAULT_INFER_TEMPLATE: &str = include_str!("../prompts/infer.txt");

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("prompt template not found: {0}")]
    TemplateMissing(String),
    #[error("template placeholder {{{{{0}}}}} has no value")]
    MissingValue(String),
    #[error("template placeholder {{{{{0}}}}} is not closed")]
    Unclosed(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub localize: String,
    pub infer: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self { localize: DEFAULT_LOCALIZE_TEMPLATE.into(), infer: DEFAULT_INFER_TEMPLATE.into() }
    }
}

impl PromptTemplates {
    /// Reads `localize.txt` and `infer.txt` from `dir`.
    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|_| PromptError::TemplateMissing(p.display().to_string()))
        };
        Ok(Self { localize: read("localize.txt")?, infer: read("infer.txt")? })
    }
}

/// Substitutes `{{name}}` placeholders in one pass; substituted values are
/// not rescanned.
pub fn render_template(template: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or(PromptError::Unclosed(start))?;
        let name = after[..end].trim();
        let value = values
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::MissingValue(name.to_string()))?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Example block: failing method, verifier output and fixing assertions.
/// Empty input renders as an empty string.
pub fn render_examples(examples: &[ExampleEntry]) -> String {
    let mut out = String::new();
    for (n, e) in examples.iter().enumerate() {
        out.push_str(&format!(
            "\nExample {}:\nMethod:\n{}\nVerifier output:\n{}\nFixing assertions:\n{}\n",
            n + 1,
            e.method_text.trim_end(),
            e.filtered_error_text.trim_end(),
            e.fixing_assertions.join("\n")
        ));
    }
    out
}

/// The first top-level JSON array in `text` that parses, skipping prose and
/// markdown fences around it.
pub fn first_json_array(text: &str) -> Option<serde_json::Value> {
    let bytes = text.as_bytes();
    let mut from = 0;
    while let Some(off) = text[from..].find('[') {
        let start = from + off;
        if let Some(end) = matching_bracket(bytes, start) {
            if let Ok(v) = serde_json::from_str::<serde_json::Value>(&text[start..=end]) {
                if v.is_array() {
                    return Some(v);
                }
            }
        }
        from = start + 1;
    }
    None
}

fn matching_bracket(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut i = start;
    while i < bytes.len() {
        let b = bytes[i];
        if in_str {
            match b {
                b'\\' => i += 1,
                b'"' => in_str = false,
                _ => {}
            }
        } else {
            match b {
                b'"' => in_str = true,
                b'[' => depth += 1,
                b']' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(i);
                    }
                }
                _ => {}
            }
        }
        i += 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render() {
        assert_eq!(render_template("a {{x}} b {{ y }}", &[("x", "{{y}}"), ("y", "2")]).unwrap(), "a {{y}} b 2");
        assert!(matches!(render_template("{{z}}", &[]), Err(PromptError::MissingValue(_))));
        assert!(matches!(render_template("{{z", &[]), Err(PromptError::Unclosed(_))));
    }

    #[test]
    fn defaults_have_placeholders() {
        let t = PromptTemplates::default();
        for p in ["{{numbered_method}}", "{{error_message}}", "{{examples}}"] {
            assert!(t.localize.contains(p));
        }
        for p in ["{{marked_method}}", "{{error_message}}", "{{examples}}", "{{context}}"] {
            assert!(t.infer.contains(p));
        }
    }

    #[test]
    fn json_scraping() {
        assert_eq!(first_json_array("Sure! ```json\n[5, 6]\n``` done").unwrap(), serde_json::json!([5, 6]));
        assert_eq!(first_json_array("line [a] then [1]").unwrap(), serde_json::json!([1]));
        assert_eq!(first_json_array(r#"[["x]\"", "y"]]"#).unwrap(), serde_json::json!([["x]\"", "y"]]));
        assert!(first_json_array("no array").is_none());
    }
}
