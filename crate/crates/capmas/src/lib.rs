//! Correct and evaluate hyper-detailed image captions.
//!
//! Long captions from vision-language models are detailed but unreliable:
//! the later a claim appears, the less the model grounds it in the image,
//! and the worse classic hallucination detectors get. This crate builds
//! the countermeasure as a library:
//!
//! 1. **Decompose** a caption into atomic propositions with an LLM.
//! 2. **Verify** each proposition independently by asking a vision model
//!    `True or False? <proposition>` and reading its first-token
//!    probabilities; the hallucination score is
//!    `-ln(clamp(p_true - p_false, epsilon, 1))`.
//! 3. **Partition** the propositions by the threshold `pi` and have an
//!    LLM **correct** the caption from the verified sets.
//!
//! Around that core sit the evaluation harnesses: decomposition-based
//! factuality judging, caption-only coverage QA, clean-vs-perturbed
//! meta-evaluation, detection-method benchmarking (Confidence /
//! Consistency / Isolation with AUROC and FPR95), pi sweeps, and
//! human-preference correlation. Everything runs against any
//! chat-completions endpoint that reports token log-probabilities, or
//! fully offline against deterministic scripted mocks.
//!
//! # Examples
//!
//! Each major capability has a runnable, network-free example:
//!
//! ```bash
//! cargo run -p capmas --example correct_caption       # decompose-verify-correct
//! cargo run -p capmas --example token_probabilities   # gateway, logprobs, cache
//! cargo run -p capmas --example detect_hallucinations # detectors + AUROC/FPR95
//! cargo run -p capmas --example evaluate_factuality   # judge a caption
//! cargo run -p capmas --example evaluate_coverage     # caption-only QA
//! cargo run -p capmas --example meta_eval             # clean vs perturbed ranking
//! cargo run -p capmas --example pi_sweep              # factuality/coverage trade-off
//! cargo run -p capmas --example human_correlation     # metric vs human preference
//! cargo run -p capmas --example summarize_captions    # five-prompt summarization
//! ```
//!
//! # Modules
//!
//! - [`gateway`] - endpoint access, token distributions, caching, mocks
//! - [`pipeline`] - the decompose-verify-partition-correct pipeline
//! - [`detectors`] - Confidence, Consistency, Isolation, positional bins
//! - [`metrics`] - AUROC, FPR at TPR, factuality ratio, coverage, Spearman
//! - [`harness`] - evaluation runs, datasets, reports with provenance
//! - [`cli`] - the `capmas` binary's command implementations
//!
//! # Determinism
//!
//! Mock endpoints are pure functions of the exchange, every completion is
//! cached before it is returned, and reports carry config and template
//! digests. A warm-cache rerun of any run reproduces its outputs byte for
//! byte without a single backend call.

pub mod cli;
pub mod detectors;
pub mod gateway;
pub mod harness;
pub mod metrics;
pub mod pipeline;

pub(crate) mod concurrency;
pub(crate) mod hashing;
pub(crate) mod serde_util;
