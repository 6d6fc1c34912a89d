//! Deterministic scripted backend: rule-ordered canned responses with
//! optional first-token probabilities, for offline runs and tests.

use serde::{Deserialize, Serialize};

use super::{ChatExchange, GatewayError, TokenDistribution, TokenProb};

/// How a rule's pattern is matched against the exchange text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockMatcher {
    /// Exact match against the full exchange text.
    ExactPrompt,
    Substring,
    /// Regular-expression search.
    Pattern,
}

/// One scripted rule. The first matching rule in a script wins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    pub matcher: MockMatcher,
    pub pattern: String,
    pub response_text: String,
    /// Position-0 token probabilities to report when the caller asks for them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_token_probs: Option<Vec<(String, f64)>>,
    /// Artificial delay before responding, for concurrency instrumentation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
}

/// An ordered rule list with an optional fallback response. Resolution is
/// a pure function of the exchange text: same exchange, same reply.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_response: Option<String>,
}

impl MockScript {
    /// Single fixed reply for every exchange.
    pub fn fixed(response: impl Into<String>) -> Self {
        Self {
            rules: Vec::new(),
            default_response: Some(response.into()),
        }
    }

    pub fn with_rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub(crate) fn validate(&self) -> Result<(), GatewayError> {
        for rule in &self.rules {
            if rule.matcher == MockMatcher::Pattern {
                regex::Regex::new(&rule.pattern)
                    .map_err(|e| GatewayError::InvalidScript(format!("bad pattern: {e}")))?;
            }
            if let Some(probs) = &rule.first_token_probs {
                for (token, p) in probs {
                    if !(0.0..=1.0).contains(p) {
                        return Err(GatewayError::InvalidScript(format!(
                            "probability {p} for token {token:?} outside [0, 1]"
                        )));
                    }
                }
                let sum: f64 = probs.iter().map(|(_, p)| p).sum();
                if sum > 1.0 + 1e-6 {
                    return Err(GatewayError::InvalidScript(format!(
                        "first-token probabilities sum to {sum} > 1"
                    )));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn resolve(&self, exchange: &ChatExchange) -> Option<MockReply> {
        let text = exchange.prompt_text();
        for rule in &self.rules {
            let hit = match rule.matcher {
                MockMatcher::ExactPrompt => text == rule.pattern,
                MockMatcher::Substring => text.contains(&rule.pattern),
                MockMatcher::Pattern => regex::Regex::new(&rule.pattern)
                    .map(|re| re.is_match(&text))
                    .unwrap_or(false),
            };
            if hit {
                return Some(MockReply {
                    text: rule.response_text.clone(),
                    distributions: rule
                        .first_token_probs
                        .as_ref()
                        .map(|probs| {
                            vec![TokenDistribution::new(
                                0,
                                probs
                                    .iter()
                                    .map(|(token_text, probability)| TokenProb {
                                        token_text: token_text.clone(),
                                        probability: *probability,
                                    })
                                    .collect(),
                            )]
                        })
                        .unwrap_or_default(),
                    latency_ms: rule.latency_ms,
                });
            }
        }
        self.default_response.as_ref().map(|text| MockReply {
            text: text.clone(),
            distributions: Vec::new(),
            latency_ms: None,
        })
    }
}

pub(crate) struct MockReply {
    pub text: String,
    pub distributions: Vec<TokenDistribution>,
    pub latency_ms: Option<u64>,
}

/// Convenience constructors for common scripted shapes.
impl MockRule {
    pub fn exact(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: MockMatcher::ExactPrompt,
            pattern: pattern.into(),
            response_text: response.into(),
            first_token_probs: None,
            latency_ms: None,
        }
    }

    pub fn substring(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: MockMatcher::Substring,
            pattern: pattern.into(),
            response_text: response.into(),
            first_token_probs: None,
            latency_ms: None,
        }
    }

    pub fn with_first_token_probs(mut self, probs: Vec<(&str, f64)>) -> Self {
        self.first_token_probs = Some(probs.into_iter().map(|(t, p)| (t.to_string(), p)).collect());
        self
    }

    pub fn with_latency_ms(mut self, ms: u64) -> Self {
        self.latency_ms = Some(ms);
        self
    }
}
