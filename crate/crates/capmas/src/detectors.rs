//! Object-hallucination scorers over labeled caption mentions.
//!
//! Three methods produce a comparable "higher is more suspicious" score:
//!
//! * Confidence: negative log of the product of the mention's generation
//!   token probabilities.
//! * Consistency: negative log of the fraction of stochastic re-captions
//!   that mention the object; an object never re-generated scores `+inf`.
//! * Isolation: query the checker with "Is there a {} in the photo?"
//!   detached from caption context and take the negative log of the
//!   "Yes" first-token probability.
//!
//! Positional binning aggregates scores by where a mention's first token
//! sits in the caption, exposing detectors that go blind late in long
//! captions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatExchange, Gateway, GatewayError, ImageRef, ModelEndpoint, Sampling};

/// Lower clamp applied to the "Yes" probability before the log, since
/// the score is undefined when the token never appears in the top-k.
const YES_PROB_FLOOR: f64 = 1e-6;

/// The prompt used to re-caption an image for consistency sampling.
pub const DETAILED_CAPTION_PROMPT: &str = "Describe the given image in a very detailed manner.";

/// The isolation query; `{}` is replaced with the object text.
pub const ISOLATION_PROMPT: &str = "Is there a {} in the photo?";

/// Bin edges matching the positional analysis with a terminal open bin.
pub const DEFAULT_BIN_EDGES: [usize; 4] = [0, 64, 128, 192];

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("mention has no token probabilities")]
    MissingProbabilities,
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionLabel {
    Hallucination,
    Grounded,
    Unknown,
}

/// One object mention inside a caption, with the position of its first
/// token and, when available, its per-token generation probabilities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectMention {
    pub object_text: String,
    pub token_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_probs: Option<Vec<f64>>,
    #[serde(default = "unknown_label")]
    pub label: MentionLabel,
}

fn unknown_label() -> MentionLabel {
    MentionLabel::Unknown
}

/// One caption with its labeled object mentions. `sample_captions`
/// optionally carries stochastic re-captions of the same image so the
/// consistency method can run offline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionSample {
    pub image: ImageRef,
    pub caption: String,
    pub mentions: Vec<ObjectMention>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_captions: Option<Vec<String>>,
}

impl DetectionSample {
    /// Normalize the invariant that mentions are ordered by token index.
    pub fn sort_mentions(&mut self) {
        self.mentions.sort_by_key(|m| m.token_index);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMethod {
    Confidence,
    Consistency,
    Isolation,
}

impl std::fmt::Display for DetectionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DetectionMethod::Confidence => "confidence",
            DetectionMethod::Consistency => "consistency",
            DetectionMethod::Isolation => "isolation",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScorePoint {
    pub mention: ObjectMention,
    #[serde(with = "crate::serde_util::inf_f64")]
    pub score: f64,
}

/// Scores of one method over a set of mentions, one point per mention.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub method: DetectionMethod,
    pub points: Vec<ScorePoint>,
}

/// Negative log of the product of the mention's token probabilities.
/// Multi-token objects multiply their probabilities, so a two-token
/// object at 0.5 each scores the same as a one-token object at 0.25.
pub fn confidence_score(mention: &ObjectMention) -> Result<f64, DetectorError> {
    let probs = mention
        .token_probs
        .as_ref()
        .ok_or(DetectorError::MissingProbabilities)?;
    if probs.is_empty() {
        return Err(DetectorError::MissingProbabilities);
    }
    let mut log_sum = 0.0;
    for &p in probs {
        if !(p > 0.0 && p <= 1.0) {
            return Err(DetectorError::Domain(format!(
                "token probability {p} outside (0, 1]"
            )));
        }
        log_sum += p.ln();
    }
    Ok(-log_sum)
}

/// Negative log of the occurrence fraction across stochastic decodes.
/// Zero occurrences return the `+inf` sentinel, which ranks above every
/// finite score in ROC analysis.
pub fn consistency_score(occurrences: usize, samples: usize) -> Result<f64, DetectorError> {
    if samples == 0 {
        return Err(DetectorError::Domain("samples must be >= 1".into()));
    }
    if occurrences > samples {
        return Err(DetectorError::Domain(format!(
            "occurrences {occurrences} exceed samples {samples}"
        )));
    }
    if occurrences == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(-(occurrences as f64 / samples as f64).ln())
}

/// Query the checker about the object alone, detached from the caption,
/// and score by the "Yes" first-token probability.
pub fn isolation_score(
    gateway: &Gateway,
    image: &ImageRef,
    object_text: &str,
    checker: &ModelEndpoint,
) -> Result<f64, DetectorError> {
    let question = ISOLATION_PROMPT.replace("{}", object_text);
    let exchange = ChatExchange::user_with_image(question, image.clone()).with_token_probs(20);
    let reply = gateway.complete(checker, &exchange)?;
    if !reply.distributions.iter().any(|d| d.position == 0) {
        return Err(DetectorError::MissingProbabilities);
    }
    let p_yes = crate::gateway::first_token_prob(&reply.distributions, &["yes"]);
    Ok(-p_yes.max(YES_PROB_FLOOR).ln())
}

/// Number of captions whose normalized text contains the normalized
/// object text as a contiguous whole-word phrase. Normalization
/// case-folds, strips punctuation, and collapses whitespace; there is no
/// lemmatization, so "ball" does not match "ballroom".
pub fn count_occurrences(object_text: &str, captions: &[String]) -> usize {
    let object_words = normalize_words(object_text);
    if object_words.is_empty() {
        return 0;
    }
    captions
        .iter()
        .filter(|caption| {
            let words = normalize_words(caption);
            words
                .windows(object_words.len())
                .any(|window| window == object_words.as_slice())
        })
        .count()
}

fn normalize_words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Generate `n` stochastic captions of one image (temperature 1.0,
/// distinct seeds 0..n), the sampling regime behind consistency scoring.
pub fn sample_captions(
    gateway: &Gateway,
    captioner: &ModelEndpoint,
    image: &ImageRef,
    n: usize,
) -> Result<Vec<String>, DetectorError> {
    let mut captions = Vec::with_capacity(n);
    for seed in 0..n {
        let exchange = ChatExchange::user_with_image(DETAILED_CAPTION_PROMPT, image.clone())
            .with_sampling(Sampling {
                temperature: 1.0,
                top_p: 1.0,
                max_tokens: 1024,
                seed: Some(seed as u64),
            });
        captions.push(gateway.complete(captioner, &exchange)?.text);
    }
    Ok(captions)
}

/// Statistics of one token-index bin. `upper == None` marks the terminal
/// open-ended bin; `mean`/`std` are absent when the bin is empty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PositionBin {
    pub lower: usize,
    pub upper: Option<usize>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
}

/// Positional binning result: finite-scored points land in bins,
/// infinite-scored points are tallied separately so that
/// `bins.count sum + infinite_count == points`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinnedScores {
    pub method: DetectionMethod,
    pub bins: Vec<PositionBin>,
    pub infinite_count: usize,
}

/// Aggregate a score series into token-index bins. `edges` must start at
/// 0 and increase strictly; the final bin is open-ended. Mean and
/// population standard deviation are computed per bin over finite scores.
pub fn bin_by_position(
    series: &ScoreSeries,
    edges: &[usize],
) -> Result<BinnedScores, DetectorError> {
    if edges.is_empty() {
        return Err(DetectorError::Domain("bin edges must be non-empty".into()));
    }
    if edges[0] != 0 {
        return Err(DetectorError::Domain(
            "first bin edge must be 0 so every token index has a bin".into(),
        ));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DetectorError::Domain(
            "bin edges must be strictly increasing".into(),
        ));
    }

    let mut members: Vec<Vec<f64>> = vec![Vec::new(); edges.len()];
    let mut infinite_count = 0;
    for point in &series.points {
        if point.score.is_infinite() {
            infinite_count += 1;
            continue;
        }
        // last bin whose lower edge is <= token_index
        let bin = edges
            .iter()
            .rposition(|&lower| lower <= point.mention.token_index)
            .expect("edge 0 covers every index");
        members[bin].push(point.score);
    }

    let bins = members
        .iter()
        .enumerate()
        .map(|(i, scores)| {
            let (mean, std) = if scores.is_empty() {
                (None, None)
            } else {
                let n = scores.len() as f64;
                let mean = scores.iter().sum::<f64>() / n;
                let variance = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
                (Some(mean), Some(variance.sqrt()))
            };
            PositionBin {
                lower: edges[i],
                upper: edges.get(i + 1).copied(),
                mean,
                std,
                count: scores.len(),
            }
        })
        .collect();

    Ok(BinnedScores {
        method: series.method,
        bins,
        infinite_count,
    })
}
