//! Prompt templates with named placeholders. Defaults ship with the
//! crate; any template can be replaced by a plain-text file as long as
//! the required placeholders survive. Placeholder presence is checked at
//! load time so a broken template never reaches a model call.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::hashing::sha256_hex;
use crate::pipeline::PipelineError;

pub const DEFAULT_DECOMPOSE: &str = include_str!("../../templates/decompose.txt");
pub const DEFAULT_CORRECT: &str = include_str!("../../templates/correct.txt");
pub const DEFAULT_SUMMARIZE: &str = include_str!("../../templates/summarize.txt");
pub const DEFAULT_TF_PREFIX: &str = "True or False?";

/// The prompt set driving decomposition, correction, and summarization,
/// plus the prefix that turns a proposition into a true/false question.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub decompose: String,
    pub correct: String,
    pub summarize: String,
    pub tf_prefix: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            decompose: DEFAULT_DECOMPOSE.to_string(),
            correct: DEFAULT_CORRECT.to_string(),
            summarize: DEFAULT_SUMMARIZE.to_string(),
            tf_prefix: DEFAULT_TF_PREFIX.to_string(),
        }
    }
}

impl PromptTemplates {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let required: [(&str, &str, &[&str]); 3] = [
            ("decompose", &self.decompose, &["{caption}"]),
            (
                "correct",
                &self.correct,
                &["{caption}", "{true_units}", "{false_units}"],
            ),
            ("summarize", &self.summarize, &["{captions}"]),
        ];
        for (name, body, placeholders) in required {
            for placeholder in placeholders {
                if !body.contains(placeholder) {
                    return Err(PipelineError::InvalidConfig(format!(
                        "{name} template is missing the {placeholder} placeholder"
                    )));
                }
            }
        }
        if self.tf_prefix.trim().is_empty() {
            return Err(PipelineError::InvalidConfig(
                "tf_prefix must be non-empty".into(),
            ));
        }
        Ok(())
    }

    pub fn render_decompose(&self, caption: &str) -> String {
        self.decompose.replace("{caption}", caption)
    }

    pub fn render_correct(
        &self,
        caption: &str,
        true_units: &[&str],
        false_units: &[&str],
    ) -> String {
        self.correct
            .replace("{caption}", caption)
            .replace("{true_units}", &bullet_list(true_units))
            .replace("{false_units}", &bullet_list(false_units))
    }

    pub fn render_summarize(&self, captions: &[&str]) -> String {
        let numbered = captions
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{}. {c}", i + 1))
            .collect::<Vec<_>>()
            .join("\n");
        self.summarize.replace("{captions}", &numbered)
    }

    /// Prefix rule: the question is the prefix, a space, then the text.
    pub fn tf_question(&self, unit_text: &str) -> String {
        format!("{} {unit_text}", self.tf_prefix)
    }

    /// SHA-256 per template, recorded in every report and audit record.
    pub fn digests(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("decompose".into(), sha256_hex(self.decompose.as_bytes())),
            ("correct".into(), sha256_hex(self.correct.as_bytes())),
            ("summarize".into(), sha256_hex(self.summarize.as_bytes())),
            ("tf_prefix".into(), sha256_hex(self.tf_prefix.as_bytes())),
        ])
    }
}

fn bullet_list(items: &[&str]) -> String {
    if items.is_empty() {
        return "(none)".to_string();
    }
    items
        .iter()
        .map(|text| format!("- {text}"))
        .collect::<Vec<_>>()
        .join("\n")
}
