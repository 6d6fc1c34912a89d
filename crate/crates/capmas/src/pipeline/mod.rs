//! The caption-correction pipeline: decompose a caption into atomic
//! propositions, verify each against the image with a vision model's
//! first-token probabilities, partition by the threshold `pi`, and have
//! a corrector model rewrite the caption from the verified sets.

mod templates;

pub use templates::{
    PromptTemplates, DEFAULT_CORRECT, DEFAULT_DECOMPOSE, DEFAULT_SUMMARIZE, DEFAULT_TF_PREFIX,
};

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concurrency::parallel_map;
use crate::gateway::{
    first_token_prob, ChatExchange, Gateway, GatewayError, ImageRef, ModelEndpoint,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Decompose,
    Score,
    Correct,
    Summarize,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Decompose => "decompose",
            Stage::Score => "score",
            Stage::Correct => "correct",
            Stage::Summarize => "summarize",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("decomposition failed: {0}")]
    Decomposition(String),
    #[error("correction failed: {0}")]
    Correction(String),
    #[error("summarization failed: {0}")]
    Summarization(String),
    #[error("expected {expected} captions, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("fact checker returned no position-0 token distribution")]
    MissingProbabilities,
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("{stage} stage: {source}")]
    Gateway {
        stage: Stage,
        #[source]
        source: GatewayError,
    },
}

impl PipelineError {
    fn at(stage: Stage) -> impl FnOnce(GatewayError) -> PipelineError {
        move |source| PipelineError::Gateway { stage, source }
    }
}

/// A caption to be corrected or evaluated, tied to its image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image: ImageRef,
    pub text: String,
    #[serde(default)]
    pub source_model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
}

impl CaptionRecord {
    pub fn new(image: ImageRef, text: impl Into<String>) -> Self {
        Self {
            image,
            text: text.into(),
            source_model: String::new(),
            prompt_id: None,
        }
    }
}

/// One decomposed proposition, indexed by its position in the
/// decomposer's output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicUnit {
    pub index: usize,
    pub text: String,
}

/// How the difference p_true - p_false is clamped before the log.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreClamp {
    /// Clamp the difference from below at epsilon: confident truths score
    /// near zero, everything at or below epsilon scores -ln(epsilon).
    #[default]
    Floor,
    /// Cap the difference from above at epsilon instead. Kept selectable
    /// for comparison runs; a non-positive difference yields the +inf
    /// sentinel since the log is undefined there.
    Ceiling,
}

/// The hallucination score: -ln(clamped(p_true - p_false)). Lower means
/// the checker is more confident the proposition holds.
pub fn hallucination_score(p_true: f64, p_false: f64, epsilon: f64, clamp: ScoreClamp) -> f64 {
    let diff = p_true - p_false;
    match clamp {
        ScoreClamp::Floor => -diff.clamp(epsilon, 1.0).ln(),
        ScoreClamp::Ceiling => {
            let capped = diff.min(epsilon);
            if capped <= 0.0 {
                f64::INFINITY
            } else {
                -capped.ln()
            }
        }
    }
}

/// A scored proposition: the checker's probabilities and the resulting
/// hallucination score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitVerdict {
    pub unit: AtomicUnit,
    pub p_true: f64,
    pub p_false: f64,
    #[serde(with = "crate::serde_util::inf_f64")]
    pub score: f64,
}

impl UnitVerdict {
    pub fn new(
        unit: AtomicUnit,
        p_true: f64,
        p_false: f64,
        epsilon: f64,
        clamp: ScoreClamp,
    ) -> Self {
        let score = hallucination_score(p_true, p_false, epsilon, clamp);
        Self {
            unit,
            p_true,
            p_false,
            score,
        }
    }
}

/// The threshold split: verdicts scoring at most `pi` are accepted as
/// true, the rest flagged false. Within each set, input order holds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictPartition {
    pub true_set: Vec<UnitVerdict>,
    pub false_set: Vec<UnitVerdict>,
    #[serde(with = "crate::serde_util::inf_f64")]
    pub pi: f64,
}

/// Boundary rule: a score exactly equal to `pi` goes to the true set.
pub fn partition_units(verdicts: &[UnitVerdict], pi: f64) -> VerdictPartition {
    let mut true_set = Vec::new();
    let mut false_set = Vec::new();
    for verdict in verdicts {
        if verdict.score <= pi {
            true_set.push(verdict.clone());
        } else {
            false_set.push(verdict.clone());
        }
    }
    VerdictPartition {
        true_set,
        false_set,
        pi,
    }
}

/// Endpoint roles and knobs for one pipeline instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Threshold on the hallucination score; boundary-inclusive.
    pub pi: f64,
    /// The "very small constant near zero" guarding the log.
    pub epsilon: f64,
    #[serde(default)]
    pub clamp: ScoreClamp,
    pub decomposer: ModelEndpoint,
    pub fact_checker: ModelEndpoint,
    pub corrector: ModelEndpoint,
    #[serde(default)]
    pub templates: PromptTemplates,
    /// How many per-prompt captions a summary consumes.
    #[serde(default = "default_summary_arity")]
    pub summary_arity: usize,
    /// Top-k first-token alternatives requested from the fact checker.
    #[serde(default = "crate::gateway::default_top_k_probs")]
    pub top_k_probs: u32,
}

fn default_summary_arity() -> usize {
    5
}

impl PipelineConfig {
    pub fn new(
        decomposer: ModelEndpoint,
        fact_checker: ModelEndpoint,
        corrector: ModelEndpoint,
    ) -> Self {
        Self {
            pi: 1.0,
            epsilon: 1e-6,
            clamp: ScoreClamp::default(),
            decomposer,
            fact_checker,
            corrector,
            templates: PromptTemplates::default(),
            summary_arity: default_summary_arity(),
            top_k_probs: crate::gateway::default_top_k_probs(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.templates.validate()?;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(PipelineError::InvalidConfig(format!(
                "epsilon must be in (0, 1), got {}",
                self.epsilon
            )));
        }
        if self.pi < 0.0 {
            return Err(PipelineError::InvalidConfig(format!(
                "pi must be >= 0, got {}",
                self.pi
            )));
        }
        if self.summary_arity == 0 {
            return Err(PipelineError::InvalidConfig(
                "summary_arity must be >= 1".into(),
            ));
        }
        if self.fact_checker.kind == crate::gateway::EndpointKind::Text {
            return Err(PipelineError::InvalidConfig(format!(
                "fact checker {} must be a vision or mock endpoint",
                self.fact_checker.id
            )));
        }
        for endpoint in [&self.decomposer, &self.fact_checker, &self.corrector] {
            endpoint
                .validate()
                .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        }
        Ok(())
    }

    /// Role-to-endpoint mapping recorded in audit records and reports.
    pub fn endpoint_ids(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("decomposer".into(), self.decomposer.id.clone()),
            ("fact_checker".into(), self.fact_checker.id.clone()),
            ("corrector".into(), self.corrector.id.clone()),
        ])
    }
}

/// Everything a pipeline run produced, kept for audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineRun {
    pub units: Vec<AtomicUnit>,
    /// Verdicts in unit-index order.
    pub verdicts: Vec<UnitVerdict>,
    pub partition: VerdictPartition,
    pub corrected: String,
}

/// One JSON audit record per corrected caption.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRecord {
    pub image_digest: String,
    pub units: Vec<AtomicUnit>,
    pub verdicts: Vec<UnitVerdict>,
    pub pi: f64,
    pub epsilon: f64,
    pub corrected: String,
    pub endpoint_ids: BTreeMap<String, String>,
    pub template_digests: BTreeMap<String, String>,
}

impl AuditRecord {
    pub fn from_run(caption: &CaptionRecord, run: &PipelineRun, config: &PipelineConfig) -> Self {
        Self {
            image_digest: caption.image.digest.clone(),
            units: run.units.clone(),
            verdicts: run.verdicts.clone(),
            pi: config.pi,
            epsilon: config.epsilon,
            corrected: run.corrected.clone(),
            endpoint_ids: config.endpoint_ids(),
            template_digests: config.templates.digests(),
        }
    }
}

/// A configured pipeline bound to a gateway.
pub struct Pipeline<'g> {
    gateway: &'g Gateway,
    config: PipelineConfig,
}

impl<'g> Pipeline<'g> {
    pub fn new(gateway: &'g Gateway, config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self { gateway, config })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Break a caption into atomic propositions via the decomposer model.
    /// An unparseable reply triggers exactly one re-prompt with a format
    /// reminder before giving up.
    pub fn decompose(&self, caption: &CaptionRecord) -> Result<Vec<AtomicUnit>, PipelineError> {
        if caption.text.trim().is_empty() {
            return Err(PipelineError::Decomposition("caption text is empty".into()));
        }
        let prompt = self.config.templates.render_decompose(&caption.text);
        let reply = self
            .gateway
            .complete(&self.config.decomposer, &ChatExchange::user(&prompt))
            .map_err(PipelineError::at(Stage::Decompose))?;
        let mut units = parse_enumerated_list(&reply.text);
        if units.is_empty() {
            let reminder = format!(
                "{prompt}\n\nReturn only a numbered list with one atomic proposition per line."
            );
            let retry = self
                .gateway
                .complete(&self.config.decomposer, &ChatExchange::user(&reminder))
                .map_err(PipelineError::at(Stage::Decompose))?;
            units = parse_enumerated_list(&retry.text);
        }
        if units.is_empty() {
            return Err(PipelineError::Decomposition(
                "no propositions parsed after one re-prompt".into(),
            ));
        }
        Ok(units
            .into_iter()
            .enumerate()
            .map(|(index, text)| AtomicUnit { index, text })
            .collect())
    }

    pub fn build_tf_question(&self, unit: &AtomicUnit) -> String {
        self.config.templates.tf_question(&unit.text)
    }

    /// Ask the fact checker whether one proposition holds for the image
    /// and derive the hallucination score from its first-token
    /// probabilities for "True" and "False".
    pub fn score_unit(
        &self,
        image: &ImageRef,
        unit: &AtomicUnit,
    ) -> Result<UnitVerdict, PipelineError> {
        let question = self.build_tf_question(unit);
        let exchange = ChatExchange::user_with_image(question, image.clone())
            .with_token_probs(self.config.top_k_probs);
        let reply = self
            .gateway
            .complete(&self.config.fact_checker, &exchange)
            .map_err(PipelineError::at(Stage::Score))?;
        if !reply.distributions.iter().any(|d| d.position == 0) {
            return Err(PipelineError::MissingProbabilities);
        }
        let p_true = first_token_prob(&reply.distributions, &["true"]);
        let p_false = first_token_prob(&reply.distributions, &["false"]);
        Ok(UnitVerdict::new(
            unit.clone(),
            p_true,
            p_false,
            self.config.epsilon,
            self.config.clamp,
        ))
    }

    /// Score every unit, fanning out up to the fact checker's in-flight
    /// limit; results come back in unit-index order.
    pub fn score_units(
        &self,
        image: &ImageRef,
        units: &[AtomicUnit],
    ) -> Result<Vec<UnitVerdict>, PipelineError> {
        let workers = self.config.fact_checker.max_in_flight;
        parallel_map(units, workers, |_, unit| self.score_unit(image, unit))
            .into_iter()
            .collect()
    }

    /// Rewrite the caption from the verified sets. The prompt carries the
    /// initial caption, the accepted propositions labeled true, and the
    /// flagged ones labeled false.
    pub fn correct_caption(
        &self,
        caption: &CaptionRecord,
        partition: &VerdictPartition,
    ) -> Result<String, PipelineError> {
        let true_texts: Vec<&str> = partition
            .true_set
            .iter()
            .map(|v| v.unit.text.as_str())
            .collect();
        let false_texts: Vec<&str> = partition
            .false_set
            .iter()
            .map(|v| v.unit.text.as_str())
            .collect();
        let prompt = self
            .config
            .templates
            .render_correct(&caption.text, &true_texts, &false_texts);
        let reply = self
            .gateway
            .complete(&self.config.corrector, &ChatExchange::user(&prompt))
            .map_err(PipelineError::at(Stage::Correct))?;
        if !reply.text.trim().is_empty() {
            return Ok(reply.text);
        }
        let reminder = format!("{prompt}\n\nThe corrected caption must not be empty.");
        let retry = self
            .gateway
            .complete(&self.config.corrector, &ChatExchange::user(&reminder))
            .map_err(PipelineError::at(Stage::Correct))?;
        if retry.text.trim().is_empty() {
            return Err(PipelineError::Correction(
                "corrector returned empty output after one retry".into(),
            ));
        }
        Ok(retry.text)
    }

    /// Full pass: decompose, score every unit, partition at the
    /// configured pi, correct. All intermediates are returned for audit.
    pub fn run(&self, caption: &CaptionRecord) -> Result<PipelineRun, PipelineError> {
        let units = self.decompose(caption)?;
        let verdicts = self.score_units(&caption.image, &units)?;
        let partition = partition_units(&verdicts, self.config.pi);
        let corrected = self.correct_caption(caption, &partition)?;
        Ok(PipelineRun {
            units,
            verdicts,
            partition,
            corrected,
        })
    }

    /// Merge the per-prompt captions of one image into a single caption.
    /// The caption count must match the configured arity exactly.
    pub fn summarize_multi_prompt(
        &self,
        captions: &[CaptionRecord],
    ) -> Result<String, PipelineError> {
        if captions.len() != self.config.summary_arity {
            return Err(PipelineError::Arity {
                expected: self.config.summary_arity,
                got: captions.len(),
            });
        }
        let texts: Vec<&str> = captions.iter().map(|c| c.text.as_str()).collect();
        let prompt = self.config.templates.render_summarize(&texts);
        let reply = self
            .gateway
            .complete(&self.config.decomposer, &ChatExchange::user(&prompt))
            .map_err(PipelineError::at(Stage::Summarize))?;
        if reply.text.trim().is_empty() {
            return Err(PipelineError::Summarization(
                "summarizer returned empty output".into(),
            ));
        }
        Ok(reply.text)
    }
}

static ENUM_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:\d+[.)]\s*|[-*•](?:\s+|$))").unwrap());

/// Tolerant enumerated-list grammar: numbered ("1.", "2)") or bulleted
/// ("-", "*") lines, blank lines ignored, header lines ending with a
/// colon ignored, unmarked lines kept verbatim.
pub(crate) fn parse_enumerated_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|line| !line.is_empty() && !line.ends_with(':'))
        .map(|line| ENUM_MARKER.replace(line, "").trim().to_string())
        .filter(|line| !line.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockRule, MockScript};
    use proptest::prelude::*;

    fn mock_endpoint(id: &str) -> ModelEndpoint {
        ModelEndpoint::mock(id)
    }

    fn pipeline_config() -> PipelineConfig {
        PipelineConfig::new(
            mock_endpoint("decomposer"),
            mock_endpoint("checker"),
            mock_endpoint("corrector"),
        )
    }

    fn image() -> ImageRef {
        ImageRef::from_bytes(b"test image")
    }

    #[test]
    fn decompose_splits_conjunction_into_propositions() {
        let gateway = Gateway::in_memory();
        gateway
            .register_mock(
                "decomposer",
                MockScript::fixed("1. A house has a red roof\n2. A house has a chimney"),
            )
            .unwrap();
        let pipeline = Pipeline::new(&gateway, pipeline_config()).unwrap();
        let caption = CaptionRecord::new(image(), "A house has a red roof and a chimney");
        let units = pipeline.decompose(&caption).unwrap();
        assert_eq!(units.len(), 2);
        assert_eq!(units[0].text, "A house has a red roof");
        assert_eq!(units[1].text, "A house has a chimney");
        assert_eq!(units[0].index, 0);
        assert_eq!(units[1].index, 1);
    }

    #[test]
    fn decompose_single_clause_identity() {
        let gateway = Gateway::in_memory();
        gateway
            .register_mock("decomposer", MockScript::fixed("1. A cat sleeps"))
            .unwrap();
        let pipeline = Pipeline::new(&gateway, pipeline_config()).unwrap();
        let units = pipeline
            .decompose(&CaptionRecord::new(image(), "A cat sleeps"))
            .unwrap();
        assert_eq!(units.len(), 1);
        assert_eq!(units[0].text, "A cat sleeps");
    }

    #[test]
    fn list_parser_grammar_hand_traced() {
        assert_eq!(parse_enumerated_list("1. A\n\n2. B\n3. C"), ["A", "B", "C"]);
        assert_eq!(parse_enumerated_list("- A\n* B"), ["A", "B"]);
        assert_eq!(
            parse_enumerated_list("1) first\n2) second"),
            ["first", "second"]
        );
        // headers and pure-marker lines vanish, unmarked lines survive
        assert_eq!(
            parse_enumerated_list("Propositions:\nplain line\n- "),
            ["plain line"]
        );
        assert!(parse_enumerated_list("").is_empty());
    }

    #[test]
    fn decompose_reprompts_once_then_errors() {
        let gateway = Gateway::in_memory();
        // Empty on the first prompt; the reminder prompt parses.
        gateway
            .register_mock(
                "decomposer",
                MockScript {
                    rules: vec![MockRule::substring(
                        "numbered list with one atomic",
                        "1. recovered",
                    )],
                    default_response: Some(String::new()),
                },
            )
            .unwrap();
        let pipeline = Pipeline::new(&gateway, pipeline_config()).unwrap();
        let units = pipeline
            .decompose(&CaptionRecord::new(image(), "whatever"))
            .unwrap();
        assert_eq!(units[0].text, "recovered");
        assert_eq!(gateway.backend_calls("decomposer"), 2);

        // Always empty: one re-prompt, then a decomposition error.
        let gateway = Gateway::in_memory();
        gateway
            .register_mock("decomposer", MockScript::fixed(""))
            .unwrap();
        let pipeline = Pipeline::new(&gateway, pipeline_config()).unwrap();
        let err = pipeline
            .decompose(&CaptionRecord::new(image(), "whatever"))
            .unwrap_err();
        assert!(matches!(err, PipelineError::Decomposition(_)));
        assert_eq!(gateway.backend_calls("decomposer"), 2);
    }

    fn checker_script(p_true: f64, p_false: f64) -> MockScript {
        MockScript {
            rules: vec![MockRule::substring("True or False?", "True")
                .with_first_token_probs(vec![("True", p_true), ("False", p_false)])],
            default_response: None,
        }
    }

    fn score_with(p_true: f64, p_false: f64) -> f64 {
        let gateway = Gateway::in_memory();
        gateway
            .register_mock("checker", checker_script(p_true, p_false))
            .unwrap();
        let pipeline = Pipeline::new(&gateway, pipeline_config()).unwrap();
        let unit = AtomicUnit {
            index: 0,
            text: "A house has a chimney".into(),
        };
        pipeline.score_unit(&image(), &unit).unwrap().score
    }

    #[test]
    fn score_unit_hand_computed_values() {
        assert_eq!(score_with(1.0, 0.0), 0.0);
        // -ln(1e-6), -ln(0.85): frozen from an independent calculator
        assert!((score_with(0.4, 0.4) - 13.815510557964274).abs() < 1e-9);
        assert!((score_with(0.9, 0.05) - 0.16251892949777494).abs() < 1e-9);
    }

    #[test]
    fn score_unit_without_distributions_is_missing_probabilities() {
        let gateway = Gateway::in_memory();
        gateway
            .register_mock("checker", MockScript::fixed("True"))
            .unwrap();
        let pipeline = Pipeline::new(&gateway, pipeline_config()).unwrap();
        let unit = AtomicUnit {
            index: 0,
            text: "x".into(),
        };
        let err = pipeline.score_unit(&image(), &unit).unwrap_err();
        assert!(matches!(err, PipelineError::MissingProbabilities));
    }

    #[test]
    fn ceiling_clamp_matches_the_alternative_reading() {
        // min(diff, eps) with diff = 0.9: -ln(1e-6); with diff <= 0: +inf
        assert!(
            (hallucination_score(0.95, 0.05, 1e-6, ScoreClamp::Ceiling) - 13.815510557964274).abs()
                < 1e-9
        );
        assert!(hallucination_score(0.2, 0.6, 1e-6, ScoreClamp::Ceiling).is_infinite());
    }

    fn verdict(index: usize, score_target: f64) -> UnitVerdict {
        // p_false = 0 so score = -ln(p_true); invert for the target.
        let p_true = (-score_target).exp();
        UnitVerdict::new(
            AtomicUnit {
                index,
                text: format!("unit {index}"),
            },
            p_true,
            0.0,
            1e-6,
            ScoreClamp::Floor,
        )
    }

    #[test]
    fn partition_is_boundary_inclusive() {
        let verdicts = vec![verdict(0, 0.2), verdict(1, 1.5), verdict(2, 1.0)];
        let partition = partition_units(&verdicts, 1.0);
        let true_scores: Vec<f64> = partition.true_set.iter().map(|v| v.score).collect();
        let false_scores: Vec<f64> = partition.false_set.iter().map(|v| v.score).collect();
        assert_eq!(true_scores.len(), 2);
        assert!((true_scores[0] - 0.2).abs() < 1e-9);
        assert!((true_scores[1] - 1.0).abs() < 1e-9);
        assert_eq!(false_scores.len(), 1);
        assert!((false_scores[0] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn partition_extremes() {
        let verdicts = vec![verdict(0, 0.5), verdict(1, 2.0)];
        assert!(partition_units(&verdicts, f64::INFINITY)
            .false_set
            .is_empty());
        assert!(partition_units(&verdicts, 0.0).true_set.is_empty());
    }

    #[test]
    fn correct_caption_with_empty_false_set_keeps_caption() {
        let caption_text = "A cat sleeps on a mat";
        let gateway = Gateway::in_memory();
        gateway
            .register_mock(
                "corrector",
                MockScript {
                    rules: vec![MockRule::substring(caption_text, caption_text)],
                    default_response: None,
                },
            )
            .unwrap();
        let pipeline = Pipeline::new(&gateway, pipeline_config()).unwrap();
        let caption = CaptionRecord::new(image(), caption_text);
        let partition = partition_units(&[verdict(0, 0.1)], 1.0);
        let corrected = pipeline.correct_caption(&caption, &partition).unwrap();
        assert_eq!(corrected, caption_text);
    }

    #[test]
    fn corrector_empty_output_retries_once_then_errors() {
        let gateway = Gateway::in_memory();
        gateway
            .register_mock("corrector", MockScript::fixed(""))
            .unwrap();
        let pipeline = Pipeline::new(&gateway, pipeline_config()).unwrap();
        let caption = CaptionRecord::new(image(), "some caption");
        let err = pipeline
            .correct_caption(&caption, &partition_units(&[], 1.0))
            .unwrap_err();
        assert!(matches!(err, PipelineError::Correction(_)));
        assert_eq!(gateway.backend_calls("corrector"), 2);
    }

    #[test]
    fn broken_template_fails_at_pipeline_construction() {
        let mut config = pipeline_config();
        config.templates.decompose = "no placeholder here".into();
        let gateway = Gateway::in_memory();
        let err = match Pipeline::new(&gateway, config) {
            Ok(_) => panic!("expected a config error"),
            Err(e) => e,
        };
        assert!(matches!(err, PipelineError::InvalidConfig(_)));
    }

    fn full_mock_gateway() -> Gateway {
        let gateway = Gateway::in_memory();
        gateway
            .register_mock(
                "decomposer",
                MockScript::fixed("1. A dog runs\n2. A dog wears a hat"),
            )
            .unwrap();
        gateway
            .register_mock(
                "checker",
                MockScript {
                    rules: vec![
                        MockRule::substring("A dog runs", "True")
                            .with_first_token_probs(vec![("True", 0.95), ("False", 0.01)]),
                        MockRule::substring("A dog wears a hat", "False")
                            .with_first_token_probs(vec![("True", 0.1), ("False", 0.85)]),
                    ],
                    default_response: None,
                },
            )
            .unwrap();
        gateway
            .register_mock(
                "corrector",
                MockScript {
                    rules: vec![MockRule::substring("A dog wears a hat", "A dog runs.")],
                    default_response: Some("unreachable".into()),
                },
            )
            .unwrap();
        gateway
    }

    #[test]
    fn run_pipeline_end_to_end_is_deterministic() {
        let gateway = full_mock_gateway();
        let pipeline = Pipeline::new(&gateway, pipeline_config()).unwrap();
        let caption = CaptionRecord::new(image(), "A dog runs and wears a hat");
        let first = pipeline.run(&caption).unwrap();
        let second = pipeline.run(&caption).unwrap();
        assert_eq!(first.corrected, "A dog runs.");
        assert_eq!(first.corrected, second.corrected);
        assert_eq!(first.partition.true_set.len(), 1);
        assert_eq!(first.partition.false_set.len(), 1);
        assert_eq!(first.units.len(), 2);
        // verdicts stay in unit-index order regardless of fan-out timing
        assert_eq!(first.verdicts[0].unit.index, 0);
        assert_eq!(first.verdicts[1].unit.index, 1);
    }

    #[test]
    fn audit_record_carries_full_provenance() {
        let gateway = full_mock_gateway();
        let pipeline = Pipeline::new(&gateway, pipeline_config()).unwrap();
        let caption = CaptionRecord::new(image(), "A dog runs and wears a hat");
        let run = pipeline.run(&caption).unwrap();
        let audit = AuditRecord::from_run(&caption, &run, pipeline.config());
        assert_eq!(audit.image_digest, caption.image.digest);
        assert_eq!(audit.pi, 1.0);
        assert_eq!(audit.epsilon, 1e-6);
        assert_eq!(audit.endpoint_ids["fact_checker"], "checker");
        assert_eq!(audit.template_digests.len(), 4);
        // round-trips through JSON
        let json = serde_json::to_string(&audit).unwrap();
        let back: AuditRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.corrected, audit.corrected);
    }

    #[test]
    fn summarize_idempotent_on_identical_captions() {
        let text = "Five copies of the same caption";
        let gateway = Gateway::in_memory();
        gateway
            .register_mock(
                "decomposer",
                MockScript {
                    rules: vec![MockRule::substring(text, text)],
                    default_response: None,
                },
            )
            .unwrap();
        let pipeline = Pipeline::new(&gateway, pipeline_config()).unwrap();
        let captions: Vec<CaptionRecord> =
            (0..5).map(|_| CaptionRecord::new(image(), text)).collect();
        assert_eq!(pipeline.summarize_multi_prompt(&captions).unwrap(), text);
    }

    #[test]
    fn summarize_arity_mismatch() {
        let gateway = Gateway::in_memory();
        let pipeline = Pipeline::new(&gateway, pipeline_config()).unwrap();
        let captions: Vec<CaptionRecord> = (0..4)
            .map(|i| CaptionRecord::new(image(), format!("caption {i}")))
            .collect();
        let err = pipeline.summarize_multi_prompt(&captions).unwrap_err();
        assert!(matches!(
            err,
            PipelineError::Arity {
                expected: 5,
                got: 4
            }
        ));
    }

    proptest! {
        #[test]
        fn score_matches_one_line_oracle(
            p_true in 0.0f64..=1.0,
            p_false in 0.0f64..=1.0,
            eps_exp in 1.0f64..12.0,
        ) {
            let epsilon = 10f64.powf(-eps_exp);
            let score = hallucination_score(p_true, p_false, epsilon, ScoreClamp::Floor);
            let oracle = -(p_true - p_false).max(epsilon).ln();
            prop_assert!((score - oracle).abs() < 1e-12);
            prop_assert!(score >= 0.0);
        }

        #[test]
        fn score_non_increasing_in_difference(
            d1 in -1.0f64..=1.0,
            d2 in -1.0f64..=1.0,
        ) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            // realize the differences with p_false = 0 where possible
            let score = |d: f64| {
                let (pt, pf) = if d >= 0.0 { (d, 0.0) } else { (0.0, -d) };
                hallucination_score(pt, pf, 1e-6, ScoreClamp::Floor)
            };
            prop_assert!(score(hi) <= score(lo) + 1e-12);
        }

        #[test]
        fn partition_totality_and_pi_monotonicity(
            scores in proptest::collection::vec(0.0f64..4.0, 1..40),
            pi_lo in 0.0f64..4.0,
            pi_hi in 0.0f64..4.0,
        ) {
            let (pi_lo, pi_hi) = if pi_lo <= pi_hi { (pi_lo, pi_hi) } else { (pi_hi, pi_lo) };
            let verdicts: Vec<UnitVerdict> = scores
                .iter()
                .enumerate()
                .map(|(i, &s)| verdict(i, s))
                .collect();
            let at_lo = partition_units(&verdicts, pi_lo);
            let at_hi = partition_units(&verdicts, pi_hi);
            prop_assert_eq!(at_lo.true_set.len() + at_lo.false_set.len(), verdicts.len());
            // lower pi flags at least as many units
            prop_assert!(at_lo.false_set.len() >= at_hi.false_set.len());
            let hi_flagged: Vec<usize> = at_hi.false_set.iter().map(|v| v.unit.index).collect();
            let lo_flagged: Vec<usize> = at_lo.false_set.iter().map(|v| v.unit.index).collect();
            for idx in hi_flagged {
                prop_assert!(lo_flagged.contains(&idx));
            }
            // membership decided solely by score vs pi
            for v in &at_lo.true_set {
                prop_assert!(v.score <= pi_lo);
            }
            for v in &at_lo.false_set {
                prop_assert!(v.score > pi_lo);
            }
        }
    }
}
