//! Evaluation harnesses: decomposition-based factuality judging,
//! caption-only coverage QA, clean-vs-perturbed meta-evaluation,
//! detection benchmarking, pi sweeps, and human-correlation runs.

pub mod authoring;
pub mod datasets;
pub mod reference;
mod report;

pub use datasets::{
    load_caption_records, load_coverage_items, load_detection_samples, load_factuality_items,
    load_human_pairs, load_variant_sets, read_jsonl, write_jsonl, CaptionVariantSet, CoverageItem,
    FactualityItem, HumanPreferencePair, Winner,
};
pub use report::{pi_key, EvalReport, Provenance, ReportKind, TimeSpan};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::concurrency::parallel_map;
use crate::detectors::{
    self, bin_by_position, consistency_score, count_occurrences, DetectionMethod, DetectionSample,
    DetectorError, MentionLabel, ScorePoint, ScoreSeries,
};
use crate::gateway::{ChatExchange, Gateway, GatewayError, ImageRef, ModelEndpoint};
use crate::hashing::sha256_hex;
use crate::metrics::{self, AnswerOutcome, MetricError, RankSeries};
use crate::pipeline::{
    parse_enumerated_list, partition_units, CaptionRecord, Pipeline, PipelineConfig, PipelineError,
};
use crate::serde_util::score_to_json;

pub const DEFAULT_JUDGE_VERDICTS: &str = include_str!("../../templates/judge_verdicts.txt");
pub const DEFAULT_COVERAGE_ANSWER: &str = include_str!("../../templates/coverage_answer.txt");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("judge format error: {0}")]
    JudgeFormat(String),
    #[error("reference caption is required but missing")]
    MissingReference,
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("report inconsistency: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Prompts used by the judge and the coverage answerer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeTemplates {
    /// Decomposition prompt with a `{caption}` placeholder.
    pub decompose: String,
    /// Verdict prompt with `{reference}` and `{propositions}` placeholders;
    /// the image rides along in the same message.
    pub verdicts: String,
    /// Coverage answer prompt with `{caption}`, `{question}`, `{options}`.
    pub answer: String,
}

impl Default for JudgeTemplates {
    fn default() -> Self {
        Self {
            decompose: crate::pipeline::DEFAULT_DECOMPOSE.to_string(),
            verdicts: DEFAULT_JUDGE_VERDICTS.to_string(),
            answer: DEFAULT_COVERAGE_ANSWER.to_string(),
        }
    }
}

impl JudgeTemplates {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let required: [(&str, &str, &[&str]); 3] = [
            ("decompose", &self.decompose, &["{caption}"]),
            (
                "verdicts",
                &self.verdicts,
                &["{reference}", "{propositions}"],
            ),
            (
                "answer",
                &self.answer,
                &["{caption}", "{question}", "{options}"],
            ),
        ];
        for (name, body, placeholders) in required {
            for placeholder in placeholders {
                if !body.contains(placeholder) {
                    return Err(HarnessError::Dataset(format!(
                        "judge {name} template is missing {placeholder}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn digests(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            (
                "judge_decompose".into(),
                sha256_hex(self.decompose.as_bytes()),
            ),
            (
                "judge_verdicts".into(),
                sha256_hex(self.verdicts.as_bytes()),
            ),
            ("coverage_answer".into(), sha256_hex(self.answer.as_bytes())),
        ])
    }

    fn render_verdicts(&self, reference: &str, propositions: &[String]) -> String {
        let numbered = propositions
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{}. {p}", i + 1))
            .collect::<Vec<_>>()
            .join("\n");
        self.verdicts
            .replace("{reference}", reference)
            .replace("{propositions}", &numbered)
    }

    fn render_answer(&self, caption: &str, question: &str, options: &[String]) -> String {
        let lettered = options
            .iter()
            .enumerate()
            .map(|(i, o)| format!("{}. {o}", letter_for(i)))
            .collect::<Vec<_>>()
            .join("\n");
        self.answer
            .replace("{caption}", caption)
            .replace("{question}", question)
            .replace("{options}", &lettered)
    }
}

fn letter_for(index: usize) -> char {
    (b'A' + index as u8) as char
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truth {
    True,
    False,
}

/// One judged proposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub proposition: String,
    pub verdict: Truth,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

/// The outcome of judging one caption: per-proposition verdicts and the
/// true-fraction score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactualityJudgment {
    pub verdicts: Vec<JudgeVerdict>,
    pub true_count: usize,
    pub false_count: usize,
    pub score: f64,
}

/// One answered coverage question.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed_index: Option<usize>,
    pub outcome: AnswerOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageRun {
    pub outcomes: Vec<QuestionOutcome>,
    pub accuracy: f64,
}

/// A human preference decision paired with one metric's scores for the
/// two captions.
#[derive(Debug, Clone, Copy)]
pub struct PreferencePair {
    pub human_winner: Winner,
    pub score_a: f64,
    pub score_b: f64,
}

/// Correlation between metric decisions and human preferences: winners
/// encode as +1 (A) / -1 (B), metric decisions as the sign of
/// score_A - score_B with ties encoded 0, then Spearman over the pairs.
pub fn run_human_correlation(pairs: &[PreferencePair]) -> Result<f64, HarnessError> {
    let series: Vec<(f64, f64)> = pairs
        .iter()
        .map(|pair| {
            let human = match pair.human_winner {
                Winner::A => 1.0,
                Winner::B => -1.0,
            };
            let metric = if pair.score_a > pair.score_b {
                1.0
            } else if pair.score_a < pair.score_b {
                -1.0
            } else {
                0.0
            };
            (human, metric)
        })
        .collect();
    Ok(metrics::spearman_rho(&RankSeries::new(series))?)
}

/// Evaluation session: a gateway, the judge prompt set, and the digest
/// of the configuration that launched the run.
pub struct Harness<'g> {
    gateway: &'g Gateway,
    templates: JudgeTemplates,
    config_digest: String,
}

impl<'g> Harness<'g> {
    pub fn new(gateway: &'g Gateway) -> Self {
        let templates = JudgeTemplates::default();
        let config_digest = sha256_hex(
            serde_json::to_string(&templates)
                .expect("templates serialize")
                .as_bytes(),
        );
        Self {
            gateway,
            templates,
            config_digest,
        }
    }

    pub fn with_templates(mut self, templates: JudgeTemplates) -> Result<Self, HarnessError> {
        templates.validate()?;
        self.templates = templates;
        Ok(self)
    }

    pub fn with_config_digest(mut self, digest: impl Into<String>) -> Self {
        self.config_digest = digest.into();
        self
    }

    pub fn templates(&self) -> &JudgeTemplates {
        &self.templates
    }

    fn provenance(&self, endpoints: &[(&str, &ModelEndpoint)]) -> Provenance {
        Provenance {
            endpoints: endpoints
                .iter()
                .map(|(role, ep)| (role.to_string(), ep.id.clone()))
                .collect(),
            template_digests: self.templates.digests(),
            ..Default::default()
        }
    }

    fn finalize(&self, mut report: EvalReport) -> Result<EvalReport, HarnessError> {
        report.aggregates = report.recompute_aggregates()?;
        Ok(report)
    }

    /// Decompose a caption via the judge, then obtain one TRUE/FALSE
    /// verdict per proposition given the image and the reference caption
    /// jointly. One malformed reply earns a single format-reminder retry.
    pub fn judge_factuality(
        &self,
        judge: &ModelEndpoint,
        caption: &str,
        image: &ImageRef,
        reference: &str,
    ) -> Result<FactualityJudgment, HarnessError> {
        if reference.trim().is_empty() {
            return Err(HarnessError::MissingReference);
        }
        let propositions = self.judge_decompose(judge, caption)?;
        let prompt = self.templates.render_verdicts(reference, &propositions);
        let exchange = ChatExchange::user_with_image(&prompt, image.clone());
        let reply = self.gateway.complete(judge, &exchange)?;
        let parsed = match parse_verdict_lines(&reply.text, propositions.len()) {
            Ok(parsed) => parsed,
            Err(first_failure) => {
                let reminder = format!(
                    "{prompt}\n\nYour previous reply could not be parsed. Respond with exactly \
                     one line per proposition: \"<number>. TRUE\" or \"<number>. FALSE\"."
                );
                let retry = self.gateway.complete(
                    judge,
                    &ChatExchange::user_with_image(&reminder, image.clone()),
                )?;
                parse_verdict_lines(&retry.text, propositions.len()).map_err(|second| {
                    HarnessError::JudgeFormat(format!("{first_failure}; after retry: {second}"))
                })?
            }
        };
        let verdicts: Vec<JudgeVerdict> = propositions
            .into_iter()
            .zip(parsed)
            .map(|(proposition, (verdict, rationale))| JudgeVerdict {
                proposition,
                verdict,
                rationale,
            })
            .collect();
        let true_count = verdicts.iter().filter(|v| v.verdict == Truth::True).count();
        let false_count = verdicts.len() - true_count;
        let score = metrics::factuality_ratio(true_count, false_count)?;
        Ok(FactualityJudgment {
            verdicts,
            true_count,
            false_count,
            score,
        })
    }

    fn judge_decompose(
        &self,
        judge: &ModelEndpoint,
        caption: &str,
    ) -> Result<Vec<String>, HarnessError> {
        let prompt = self.templates.decompose.replace("{caption}", caption);
        let reply = self.gateway.complete(judge, &ChatExchange::user(&prompt))?;
        let mut propositions = parse_enumerated_list(&reply.text);
        if propositions.is_empty() {
            let reminder = format!(
                "{prompt}\n\nReturn only a numbered list with one atomic proposition per line."
            );
            let retry = self
                .gateway
                .complete(judge, &ChatExchange::user(&reminder))?;
            propositions = parse_enumerated_list(&retry.text);
        }
        if propositions.is_empty() {
            return Err(HarnessError::JudgeFormat(
                "judge produced no propositions after one re-prompt".into(),
            ));
        }
        Ok(propositions)
    }

    /// Answer multiple-choice questions from the caption alone (no image
    /// is ever attached) and grade against the gold letters. Unparseable
    /// replies become incorrect outcomes, never errors.
    pub fn run_coverage(
        &self,
        answerer: &ModelEndpoint,
        caption: &str,
        items: &[CoverageItem],
    ) -> Result<CoverageRun, HarnessError> {
        let mut outcomes = Vec::with_capacity(items.len());
        for item in items {
            let prompt = self
                .templates
                .render_answer(caption, &item.question, &item.options);
            let reply = self
                .gateway
                .complete(answerer, &ChatExchange::user(&prompt))?;
            let parsed_index = parse_option_letter(&reply.text, item.options.len());
            let outcome = match parsed_index {
                Some(index) if index == item.answer_index => AnswerOutcome::Correct,
                Some(_) => AnswerOutcome::Incorrect,
                None => AnswerOutcome::Unparseable,
            };
            outcomes.push(QuestionOutcome {
                question: item.question.clone(),
                parsed_index,
                outcome,
            });
        }
        let accuracy =
            metrics::coverage_accuracy(&outcomes.iter().map(|o| o.outcome).collect::<Vec<_>>())?;
        Ok(CoverageRun { outcomes, accuracy })
    }

    /// Judge the clean caption and its three perturbed variants for every
    /// set, then compare class means. Per-item failures are recorded as
    /// warnings rather than aborting the run.
    pub fn run_meta_eval(
        &self,
        judge: &ModelEndpoint,
        sets: &[CaptionVariantSet],
    ) -> Result<EvalReport, HarnessError> {
        let mut rows = Vec::with_capacity(sets.len());
        let mut warnings = Vec::new();
        for (i, set) in sets.iter().enumerate() {
            let mut row = serde_json::Map::new();
            row.insert("image_digest".into(), json!(set.image.digest));
            let mut failed = false;
            for (class, text) in set.variants() {
                match self.judge_factuality(judge, text, &set.image, &set.reference) {
                    Ok(judgment) => {
                        row.insert(class.into(), json!(judgment.score));
                    }
                    Err(e) => {
                        warnings.push(format!("set {} ({class}): {e}", i + 1));
                        failed = true;
                        break;
                    }
                }
            }
            if !failed {
                rows.push(Value::Object(row));
            }
        }
        if rows.is_empty() {
            return Err(HarnessError::Dataset(
                "meta-evaluation judged no variant set successfully".into(),
            ));
        }
        self.finalize(EvalReport::build(
            ReportKind::MetaEval,
            self.config_digest.clone(),
            self.provenance(&[("judge", judge)]),
            rows,
            BTreeMap::new(),
            warnings,
            BTreeMap::new(),
        ))
    }

    /// Score every labeled mention with the requested methods, then
    /// compute AUROC and FPR95 per method plus positional bin curves.
    /// A method whose required inputs are missing is skipped with a
    /// recorded warning.
    pub fn run_detection_benchmark(
        &self,
        dataset: &[DetectionSample],
        methods: &BTreeSet<DetectionMethod>,
        checker: Option<&ModelEndpoint>,
        bin_edges: &[usize],
    ) -> Result<EvalReport, HarnessError> {
        let mut rows = Vec::new();
        let mut warnings = Vec::new();
        let mut attachments = BTreeMap::new();

        let labeled: Vec<(&DetectionSample, &crate::detectors::ObjectMention)> = dataset
            .iter()
            .flat_map(|sample| {
                sample
                    .mentions
                    .iter()
                    .filter(|m| m.label != MentionLabel::Unknown)
                    .map(move |m| (sample, m))
            })
            .collect();
        let unknown = dataset
            .iter()
            .flat_map(|s| &s.mentions)
            .filter(|m| m.label == MentionLabel::Unknown)
            .count();
        if unknown > 0 {
            warnings.push(format!("{unknown} unlabeled mentions excluded"));
        }

        for &method in methods {
            let series = match self.score_method(method, &labeled, checker, &mut warnings)? {
                Some(series) => series,
                None => continue,
            };
            if method == DetectionMethod::Consistency {
                // record the sampling regime backing the occurrence counts
                let counts: BTreeMap<&str, usize> = dataset
                    .iter()
                    .map(|s| {
                        (
                            s.image.digest.as_str(),
                            s.sample_captions.as_ref().map_or(0, Vec::len),
                        )
                    })
                    .collect();
                attachments.insert(
                    "consistency_samples_per_image".to_string(),
                    serde_json::to_value(&counts)
                        .map_err(|e| HarnessError::Dataset(format!("encode counts: {e}")))?,
                );
            }
            for (point, (sample, _)) in series.points.iter().zip(&labeled) {
                rows.push(json!({
                    "method": method.to_string(),
                    "image_digest": sample.image.digest,
                    "object_text": point.mention.object_text,
                    "token_index": point.mention.token_index,
                    "label": match point.mention.label {
                        MentionLabel::Hallucination => "hallucination",
                        MentionLabel::Grounded => "grounded",
                        MentionLabel::Unknown => unreachable!("unknown mentions filtered"),
                    },
                    "score": score_to_json(point.score),
                }));
            }
            let binned = bin_by_position(&series, bin_edges)?;
            attachments.insert(
                format!("bins_{method}"),
                serde_json::to_value(&binned)
                    .map_err(|e| HarnessError::Dataset(format!("encode bins: {e}")))?,
            );
        }
        if rows.is_empty() {
            return Err(HarnessError::Dataset(
                "no detection method could be scored".into(),
            ));
        }

        let endpoints: Vec<(&str, &ModelEndpoint)> =
            checker.map(|c| vec![("checker", c)]).unwrap_or_default();
        self.finalize(EvalReport::build(
            ReportKind::Detection,
            self.config_digest.clone(),
            self.provenance(&endpoints),
            rows,
            BTreeMap::new(),
            warnings,
            attachments,
        ))
    }

    fn score_method(
        &self,
        method: DetectionMethod,
        labeled: &[(&DetectionSample, &crate::detectors::ObjectMention)],
        checker: Option<&ModelEndpoint>,
        warnings: &mut Vec<String>,
    ) -> Result<Option<ScoreSeries>, HarnessError> {
        let mut points = Vec::with_capacity(labeled.len());
        match method {
            DetectionMethod::Confidence => {
                if labeled
                    .iter()
                    .any(|(_, m)| m.token_probs.as_ref().is_none_or(|p| p.is_empty()))
                {
                    warnings
                        .push("confidence skipped: some labeled mentions lack token_probs".into());
                    return Ok(None);
                }
                for (_, mention) in labeled {
                    points.push(ScorePoint {
                        mention: (*mention).clone(),
                        score: detectors::confidence_score(mention)?,
                    });
                }
            }
            DetectionMethod::Consistency => {
                if labeled
                    .iter()
                    .any(|(sample, _)| sample.sample_captions.as_ref().is_none_or(|c| c.is_empty()))
                {
                    warnings.push("consistency skipped: some samples lack sample_captions".into());
                    return Ok(None);
                }
                for (sample, mention) in labeled {
                    let captions = sample.sample_captions.as_ref().expect("checked above");
                    let occurrences = count_occurrences(&mention.object_text, captions);
                    points.push(ScorePoint {
                        mention: (*mention).clone(),
                        score: consistency_score(occurrences, captions.len())?,
                    });
                }
            }
            DetectionMethod::Isolation => {
                let Some(checker) = checker else {
                    warnings.push("isolation skipped: no checker endpoint configured".into());
                    return Ok(None);
                };
                // Fan out across mentions; output order stays fixed.
                let scores =
                    parallel_map(labeled, checker.max_in_flight, |_, (sample, mention)| {
                        detectors::isolation_score(
                            self.gateway,
                            &sample.image,
                            &mention.object_text,
                            checker,
                        )
                    });
                for (score, (_, mention)) in scores.into_iter().zip(labeled) {
                    points.push(ScorePoint {
                        mention: (*mention).clone(),
                        score: score?,
                    });
                }
            }
        }
        Ok(Some(ScoreSeries { method, points }))
    }

    /// Correct every caption once per pi value, then judge factuality and
    /// coverage of each corrected caption. Unit scores are computed once
    /// per (caption, unit) and re-partitioned per pi, since scores do not
    /// depend on the threshold.
    #[allow(clippy::too_many_arguments)]
    pub fn run_pi_sweep(
        &self,
        pipeline_config: PipelineConfig,
        pi_values: &[f64],
        items: &[FactualityItem],
        judge: &ModelEndpoint,
        coverage_items: &[CoverageItem],
        answerer: &ModelEndpoint,
    ) -> Result<EvalReport, HarnessError> {
        if pi_values.is_empty() {
            return Err(HarnessError::Dataset("pi_values must be non-empty".into()));
        }
        let pipeline = Pipeline::new(self.gateway, pipeline_config)?;
        let mut rows = Vec::new();
        for item in items {
            let caption = CaptionRecord::new(item.image.clone(), item.caption.clone());
            let units = pipeline.decompose(&caption)?;
            let verdicts = pipeline.score_units(&caption.image, &units)?;
            let image_items: Vec<CoverageItem> = coverage_items
                .iter()
                .filter(|ci| ci.image.digest == item.image.digest)
                .cloned()
                .collect();
            if image_items.is_empty() {
                return Err(HarnessError::Dataset(format!(
                    "no coverage questions for image {}",
                    item.image.digest
                )));
            }
            for &pi in pi_values {
                let partition = partition_units(&verdicts, pi);
                let flagged = partition.false_set.len();
                let corrected = pipeline.correct_caption(&caption, &partition)?;
                let judgment =
                    self.judge_factuality(judge, &corrected, &item.image, &item.reference)?;
                let coverage = self.run_coverage(answerer, &corrected, &image_items)?;
                rows.push(json!({
                    "pi": score_to_json(pi),
                    "image_digest": item.image.digest,
                    "units": units.len(),
                    "flagged": flagged as f64,
                    "corrected": corrected,
                    "factuality": judgment.score,
                    "coverage": coverage.accuracy,
                }));
            }
        }

        let mut provenance = self.provenance(&[
            ("decomposer", &pipeline.config().decomposer),
            ("fact_checker", &pipeline.config().fact_checker),
            ("corrector", &pipeline.config().corrector),
            ("judge", judge),
            ("answerer", answerer),
        ]);
        provenance.epsilon = Some(pipeline.config().epsilon);
        let attachments = BTreeMap::from([(
            "pi_values".to_string(),
            Value::Array(pi_values.iter().map(|&pi| score_to_json(pi)).collect()),
        )]);
        self.finalize(EvalReport::build(
            ReportKind::PiSweep,
            self.config_digest.clone(),
            provenance,
            rows,
            BTreeMap::new(),
            Vec::new(),
            attachments,
        ))
    }

    /// Judge a batch of captions against their references; one row per
    /// caption.
    pub fn run_factuality(
        &self,
        judge: &ModelEndpoint,
        items: &[FactualityItem],
    ) -> Result<EvalReport, HarnessError> {
        let mut rows = Vec::with_capacity(items.len());
        for item in items {
            let judgment =
                self.judge_factuality(judge, &item.caption, &item.image, &item.reference)?;
            rows.push(json!({
                "image_digest": item.image.digest,
                "true_count": judgment.true_count,
                "false_count": judgment.false_count,
                "factuality": judgment.score,
            }));
        }
        self.finalize(EvalReport::build(
            ReportKind::Factuality,
            self.config_digest.clone(),
            self.provenance(&[("judge", judge)]),
            rows,
            BTreeMap::new(),
            Vec::new(),
            BTreeMap::new(),
        ))
    }

    /// Answer every coverage question for its caption; one row per
    /// question. Captions and questions join on the image digest.
    pub fn run_coverage_batch(
        &self,
        answerer: &ModelEndpoint,
        captions: &[CaptionRecord],
        items: &[CoverageItem],
    ) -> Result<EvalReport, HarnessError> {
        let mut rows = Vec::new();
        for caption in captions {
            let image_items: Vec<CoverageItem> = items
                .iter()
                .filter(|ci| ci.image.digest == caption.image.digest)
                .cloned()
                .collect();
            if image_items.is_empty() {
                return Err(HarnessError::Dataset(format!(
                    "no coverage questions for image {}",
                    caption.image.digest
                )));
            }
            let run = self.run_coverage(answerer, &caption.text, &image_items)?;
            for (item, outcome) in image_items.iter().zip(&run.outcomes) {
                rows.push(json!({
                    "image_digest": caption.image.digest,
                    "question": item.question,
                    "outcome": match outcome.outcome {
                        AnswerOutcome::Correct => "correct",
                        AnswerOutcome::Incorrect => "incorrect",
                        AnswerOutcome::Unparseable => "unparseable",
                    },
                }));
            }
        }
        self.finalize(EvalReport::build(
            ReportKind::Coverage,
            self.config_digest.clone(),
            self.provenance(&[("answerer", answerer)]),
            rows,
            BTreeMap::new(),
            Vec::new(),
            BTreeMap::new(),
        ))
    }

    /// Correlate each scored metric with the human winners; one row per
    /// (pair, method).
    pub fn run_human_correlation_report(
        &self,
        pairs: &[HumanPreferencePair],
    ) -> Result<EvalReport, HarnessError> {
        let methods: BTreeSet<&String> = pairs.iter().flat_map(|p| p.scores.keys()).collect();
        let mut rows = Vec::new();
        let mut warnings = Vec::new();
        for method in methods {
            let mut series = Vec::with_capacity(pairs.len());
            for pair in pairs {
                let Some([a, b]) = pair.scores.get(method) else {
                    return Err(HarnessError::Dataset(format!(
                        "pair {} lacks scores for method {method}",
                        pair.pair_id
                    )));
                };
                if a == b {
                    warnings.push(format!("pair {}: {method} tie encoded as 0", pair.pair_id));
                }
                series.push(PreferencePair {
                    human_winner: pair.human_winner,
                    score_a: *a,
                    score_b: *b,
                });
            }
            for (pair, pref) in pairs.iter().zip(&series) {
                let human = match pref.human_winner {
                    Winner::A => 1.0,
                    Winner::B => -1.0,
                };
                let metric = if pref.score_a > pref.score_b {
                    1.0
                } else if pref.score_a < pref.score_b {
                    -1.0
                } else {
                    0.0
                };
                rows.push(json!({
                    "pair_id": pair.pair_id,
                    "method": method,
                    "human": human,
                    "metric": metric,
                }));
            }
        }
        self.finalize(EvalReport::build(
            ReportKind::HumanCorrelation,
            self.config_digest.clone(),
            self.provenance(&[]),
            rows,
            BTreeMap::new(),
            warnings,
            BTreeMap::new(),
        ))
    }
}

static VERDICT_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(\d+)[.):]?\s*[-–:]?\s*(true|false)\b\s*[-–:]?\s*(.*)$").unwrap()
});

/// Strict verdict grammar: one "<index>. TRUE|FALSE [rationale]" line per
/// proposition, indices 1..=n each exactly once. Unmatched lines are
/// ignored; missing or duplicated indices fail the parse.
fn parse_verdict_lines(
    text: &str,
    expected: usize,
) -> Result<Vec<(Truth, Option<String>)>, String> {
    let mut by_index: BTreeMap<usize, (Truth, Option<String>)> = BTreeMap::new();
    for line in text.lines() {
        let Some(captures) = VERDICT_LINE.captures(line) else {
            continue;
        };
        let index: usize = captures[1]
            .parse()
            .map_err(|_| "index overflow".to_string())?;
        if index == 0 || index > expected {
            continue;
        }
        let verdict = if captures[2].eq_ignore_ascii_case("true") {
            Truth::True
        } else {
            Truth::False
        };
        let rationale = captures
            .get(3)
            .map(|m| m.as_str().trim())
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        if by_index.insert(index, (verdict, rationale)).is_some() {
            return Err(format!("duplicate verdict for proposition {index}"));
        }
    }
    let missing: Vec<String> = (1..=expected)
        .filter(|i| !by_index.contains_key(i))
        .map(|i| i.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(format!(
            "missing verdicts for propositions {}",
            missing.join(", ")
        ));
    }
    Ok(by_index.into_values().collect())
}

static ANSWER_WHOLE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\(?([A-Za-z])\)?[.):]?$").unwrap());
static ANSWER_PHRASE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)answer\s+is\s*:?\s*\*{0,2}\(?([A-Za-z])\)?").unwrap());
static ANSWER_LEADING: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*\(?([A-Za-z])[.):]").unwrap());
static ANSWER_PAREN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([A-Za-z])\)").unwrap());

/// Option-letter grammar: a bare letter, a "(X)" form, or an "answer is
/// X" phrase. Distinct candidate letters are ambiguous and yield None.
fn parse_option_letter(text: &str, option_count: usize) -> Option<usize> {
    let trimmed = text.trim();
    let mut candidates = BTreeSet::new();
    if let Some(c) = ANSWER_WHOLE.captures(trimmed) {
        candidates.insert(c[1].to_ascii_uppercase());
    }
    for captures in ANSWER_PHRASE.captures_iter(trimmed) {
        candidates.insert(captures[1].to_ascii_uppercase());
    }
    if let Some(c) = ANSWER_LEADING.captures(trimmed) {
        candidates.insert(c[1].to_ascii_uppercase());
    }
    for captures in ANSWER_PAREN.captures_iter(trimmed) {
        candidates.insert(captures[1].to_ascii_uppercase());
    }
    candidates.retain(|letter| {
        let index = (letter.as_bytes()[0] - b'A') as usize;
        index < option_count
    });
    if candidates.len() != 1 {
        return None;
    }
    let letter = candidates.into_iter().next().unwrap();
    Some((letter.as_bytes()[0] - b'A') as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockRule, MockScript};

    fn image() -> ImageRef {
        ImageRef::from_bytes(b"harness image")
    }

    #[test]
    fn verdict_line_grammar() {
        let parsed = parse_verdict_lines("1. TRUE\n2. FALSE - no chimney visible", 2).unwrap();
        assert_eq!(parsed[0].0, Truth::True);
        assert_eq!(parsed[1].0, Truth::False);
        assert_eq!(parsed[1].1.as_deref(), Some("no chimney visible"));

        // tolerant to case and separators, strict about completeness
        assert!(parse_verdict_lines("1) true\n2: False", 2).is_ok());
        assert!(parse_verdict_lines("1. TRUE", 2).is_err());
        assert!(parse_verdict_lines("1. TRUE\n1. FALSE\n2. TRUE", 2).is_err());
        assert!(parse_verdict_lines("nothing matches", 1).is_err());
    }

    #[test]
    fn option_letter_grammar() {
        assert_eq!(parse_option_letter("B", 4), Some(1));
        assert_eq!(parse_option_letter("b.", 4), Some(1));
        assert_eq!(parse_option_letter("(C)", 4), Some(2));
        assert_eq!(parse_option_letter("The answer is (B).", 4), Some(1));
        assert_eq!(parse_option_letter("answer is d", 4), Some(3));
        assert_eq!(parse_option_letter("A) the red one", 4), Some(0));
        // out of range, ambiguous, or free text
        assert_eq!(parse_option_letter("E", 4), None);
        assert_eq!(parse_option_letter("(A) or maybe (B)", 4), None);
        assert_eq!(parse_option_letter("I cannot tell", 4), None);
        assert_eq!(parse_option_letter("", 4), None);
    }

    fn judge_gateway(verdict_reply: &str) -> Gateway {
        let gateway = Gateway::in_memory();
        gateway
            .register_mock(
                "judge",
                MockScript {
                    rules: vec![
                        MockRule::substring(
                            "Break the caption down",
                            "1. A house has a red roof\n2. A house has a chimney\n3. A house has a door\n4. A house has a pool",
                        ),
                        MockRule::substring("Propositions:", verdict_reply),
                    ],
                    default_response: None,
                },
            )
            .unwrap();
        gateway
    }

    #[test]
    fn judge_factuality_three_of_four_true() {
        let gateway = judge_gateway("1. TRUE\n2. TRUE\n3. TRUE\n4. FALSE");
        let harness = Harness::new(&gateway);
        let judge = ModelEndpoint::mock("judge");
        let judgment = harness
            .judge_factuality(&judge, "a house caption", &image(), "reference text")
            .unwrap();
        assert_eq!(judgment.true_count, 3);
        assert_eq!(judgment.false_count, 1);
        assert_eq!(judgment.score, 0.75);
        assert_eq!(judgment.verdicts.len(), 4);
        assert_eq!(judgment.verdicts[3].verdict, Truth::False);
    }

    #[test]
    fn judge_factuality_requires_reference() {
        let gateway = judge_gateway("1. TRUE");
        let harness = Harness::new(&gateway);
        let judge = ModelEndpoint::mock("judge");
        let err = harness
            .judge_factuality(&judge, "caption", &image(), "  ")
            .unwrap_err();
        assert!(matches!(err, HarnessError::MissingReference));
    }

    #[test]
    fn malformed_verdicts_retry_once_then_fail() {
        let gateway = judge_gateway("I refuse to follow the format");
        let harness = Harness::new(&gateway);
        let judge = ModelEndpoint::mock("judge");
        let err = harness
            .judge_factuality(&judge, "caption", &image(), "reference")
            .unwrap_err();
        assert!(matches!(err, HarnessError::JudgeFormat(_)));
        // one decompose call + two verdict attempts
        assert_eq!(gateway.backend_calls("judge"), 3);
    }

    fn coverage_items(n: usize) -> Vec<CoverageItem> {
        (0..n)
            .map(|i| CoverageItem {
                image: image(),
                question: format!("question {i}"),
                options: vec!["red".into(), "blue".into(), "green".into()],
                answer_index: i % 3,
            })
            .collect()
    }

    #[test]
    fn coverage_three_of_four_correct() {
        let gateway = Gateway::in_memory();
        // gold letters for questions 0..3 are A, B, C, A; miss the last
        gateway
            .register_mock(
                "answerer",
                MockScript {
                    rules: vec![
                        MockRule::substring("question 0", "A"),
                        MockRule::substring("question 1", "B"),
                        MockRule::substring("question 2", "The answer is (C)."),
                        MockRule::substring("question 3", "B"),
                    ],
                    default_response: None,
                },
            )
            .unwrap();
        let harness = Harness::new(&gateway);
        let answerer = ModelEndpoint::mock("answerer");
        let run = harness
            .run_coverage(&answerer, "caption", &coverage_items(4))
            .unwrap();
        assert_eq!(run.accuracy, 0.75);
        assert_eq!(run.outcomes[3].outcome, AnswerOutcome::Incorrect);
    }

    #[test]
    fn coverage_abstaining_answerer_scores_zero() {
        let gateway = Gateway::in_memory();
        gateway
            .register_mock("answerer", MockScript::fixed("I cannot determine this"))
            .unwrap();
        let harness = Harness::new(&gateway);
        let answerer = ModelEndpoint::mock("answerer");
        let run = harness
            .run_coverage(&answerer, "", &coverage_items(3))
            .unwrap();
        assert_eq!(run.accuracy, 0.0);
        assert!(run
            .outcomes
            .iter()
            .all(|o| o.outcome == AnswerOutcome::Unparseable));
    }

    #[test]
    fn human_correlation_perfect_agreement_and_inversion() {
        let agree = vec![
            PreferencePair {
                human_winner: Winner::A,
                score_a: 0.9,
                score_b: 0.2,
            },
            PreferencePair {
                human_winner: Winner::B,
                score_a: 0.1,
                score_b: 0.7,
            },
            PreferencePair {
                human_winner: Winner::A,
                score_a: 0.6,
                score_b: 0.5,
            },
        ];
        assert_eq!(run_human_correlation(&agree).unwrap(), 1.0);

        let invert: Vec<PreferencePair> = agree
            .iter()
            .map(|p| PreferencePair {
                human_winner: match p.human_winner {
                    Winner::A => Winner::B,
                    Winner::B => Winner::A,
                },
                ..*p
            })
            .collect();
        assert_eq!(run_human_correlation(&invert).unwrap(), -1.0);
    }
}
