//! Command implementations behind the `capmas` binary: correct a caption
//! file, benchmark detectors, run the evaluation harnesses, and sweep pi.
//!
//! Exit-code contract: 0 full success, 1 configuration error diagnosed
//! before any model call, 2 partial or runtime failure.

mod config;

pub use config::{OutputFormat, Overrides, RoleBindings, RunConfig};

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::detectors::DetectionMethod;
use crate::gateway::{Gateway, GatewayError};
use crate::harness::{authoring, datasets, EvalReport, Harness, HarnessError};
use crate::pipeline::{AuditRecord, Pipeline, PipelineError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Exit code class: configuration errors are 1, runtime failures 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }
}

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_PARTIAL: i32 = 2;

/// One line of a correction audit file. The first line is always the
/// header; each subsequent line is a corrected caption's audit record or
/// the error that stopped it.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditLine {
    Header {
        config_digest: String,
        pi: f64,
        epsilon: f64,
        endpoint_ids: std::collections::BTreeMap<String, String>,
        template_digests: std::collections::BTreeMap<String, String>,
    },
    Caption {
        index: usize,
        #[serde(flatten)]
        record: AuditRecord,
    },
    Error {
        index: usize,
        message: String,
    },
}

/// Correct every caption in the file, writing one audit record per
/// caption. Per-caption failures are recorded and the run continues.
pub fn cmd_correct(config: &RunConfig, captions_file: &Path) -> Result<i32, CliError> {
    let gateway = config.build_gateway()?;
    cmd_correct_with_gateway(&gateway, config, captions_file)
}

/// `cmd_correct` against a caller-supplied gateway, so tests and embedders
/// can inspect cache and call-counter behavior.
pub fn cmd_correct_with_gateway(
    gateway: &Gateway,
    config: &RunConfig,
    captions_file: &Path,
) -> Result<i32, CliError> {
    let pipeline_config = config
        .pipeline
        .clone()
        .ok_or_else(|| CliError::Config("correct requires a [pipeline] section".into()))?;
    let captions = datasets::load_caption_records(captions_file)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let pipeline = Pipeline::new(gateway, pipeline_config)?;

    let mut lines = Vec::with_capacity(captions.len() + 1);
    lines.push(AuditLine::Header {
        config_digest: config.config_digest.clone(),
        pi: pipeline.config().pi,
        epsilon: pipeline.config().epsilon,
        endpoint_ids: pipeline.config().endpoint_ids(),
        template_digests: pipeline.config().templates.digests(),
    });
    // Captions run in parallel up to the configured concurrency; the
    // audit file is assembled in input order either way.
    let runs = crate::concurrency::parallel_map(&captions, config.concurrency, |_, caption| {
        pipeline.run(caption)
    });
    let mut failures = 0usize;
    let mut flagged = 0usize;
    for (index, (caption, outcome)) in captions.iter().zip(runs).enumerate() {
        match outcome {
            Ok(run) => {
                flagged += run.partition.false_set.len();
                lines.push(AuditLine::Caption {
                    index,
                    record: AuditRecord::from_run(caption, &run, pipeline.config()),
                });
            }
            Err(e) => {
                failures += 1;
                lines.push(AuditLine::Error {
                    index,
                    message: e.to_string(),
                });
            }
        }
    }
    write_audit_lines(&config.output, &lines)?;
    println!(
        "corrected {}/{} captions ({} units flagged) -> {}",
        captions.len() - failures,
        captions.len(),
        flagged,
        config.output.display()
    );
    Ok(if failures > 0 {
        EXIT_PARTIAL
    } else {
        EXIT_SUCCESS
    })
}

fn write_audit_lines(path: &Path, lines: &[AuditLine]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut file = std::fs::File::create(path)?;
    for line in lines {
        let json = serde_json::to_string(line)
            .map_err(|e| CliError::Config(format!("encode audit: {e}")))?;
        writeln!(file, "{json}")?;
    }
    Ok(())
}

/// Benchmark the requested detection methods over a labeled dataset and
/// emit the report plus a positional-bin CSV next to it.
pub fn cmd_detect(
    config: &RunConfig,
    dataset_file: &Path,
    methods: &BTreeSet<DetectionMethod>,
    bin_edges: &[usize],
) -> Result<i32, CliError> {
    let gateway = config.build_gateway()?;
    let dataset = datasets::load_detection_samples(dataset_file)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let harness = Harness::new(&gateway).with_config_digest(config.config_digest.clone());
    let checker = match &config.roles.checker {
        Some(id) => Some(config.endpoint(id)?),
        None => None,
    };
    let report = harness.run_detection_benchmark(&dataset, methods, checker, bin_edges)?;

    write_report(config, &report)?;
    let bins_csv = bins_to_csv(&report)?;
    let bins_path = config.output.with_extension("bins.csv");
    std::fs::write(&bins_path, bins_csv)?;

    for (key, value) in &report.aggregates {
        println!("{key}: {value:.4}");
    }
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    println!("report -> {}", config.output.display());
    println!("bin curves -> {}", bins_path.display());
    Ok(EXIT_SUCCESS)
}

/// Flatten the per-method bin attachments into the export shape:
/// method, bin_lower, bin_upper, mean, std, count.
fn bins_to_csv(report: &EvalReport) -> Result<String, CliError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["method", "bin_lower", "bin_upper", "mean", "std", "count"])
        .map_err(|e| CliError::Config(format!("csv: {e}")))?;
    for (key, value) in &report.attachments {
        let Some(method) = key.strip_prefix("bins_") else {
            continue;
        };
        let binned: crate::detectors::BinnedScores = serde_json::from_value(value.clone())
            .map_err(|e| CliError::Config(format!("decode bins: {e}")))?;
        for bin in &binned.bins {
            writer
                .write_record([
                    method.to_string(),
                    bin.lower.to_string(),
                    bin.upper.map_or("inf".to_string(), |u| u.to_string()),
                    bin.mean.map_or(String::new(), |m| m.to_string()),
                    bin.std.map_or(String::new(), |s| s.to_string()),
                    bin.count.to_string(),
                ])
                .map_err(|e| CliError::Config(format!("csv: {e}")))?;
        }
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| CliError::Config(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::Config(format!("csv: {e}")))
}

/// Which evaluation harness `cmd_eval` dispatches to.
#[derive(Debug, Clone)]
pub enum EvalMode {
    Factuality,
    /// Coverage needs the caption file alongside the question dataset.
    Coverage {
        captions_file: std::path::PathBuf,
    },
    Meta,
    HumanCorr,
}

pub fn cmd_eval(config: &RunConfig, mode: &EvalMode, dataset_file: &Path) -> Result<i32, CliError> {
    let gateway = config.build_gateway()?;
    let harness = Harness::new(&gateway)
        .with_templates(config.judge_templates.clone())?
        .with_config_digest(config.config_digest.clone());

    let report = match mode {
        EvalMode::Factuality => {
            let items = datasets::load_factuality_items(dataset_file)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let judge = config.role_endpoint("judge", &config.roles.judge)?;
            harness.run_factuality(judge, &items)?
        }
        EvalMode::Coverage { captions_file } => {
            let items = datasets::load_coverage_items(dataset_file)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let captions = datasets::load_caption_records(captions_file)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let answerer = config.role_endpoint("answerer", &config.roles.answerer)?;
            harness.run_coverage_batch(answerer, &captions, &items)?
        }
        EvalMode::Meta => {
            let sets = datasets::load_variant_sets(dataset_file)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let judge = config.role_endpoint("judge", &config.roles.judge)?;
            harness.run_meta_eval(judge, &sets)?
        }
        EvalMode::HumanCorr => {
            let pairs = datasets::load_human_pairs(dataset_file)
                .map_err(|e| CliError::Config(e.to_string()))?;
            harness.run_human_correlation_report(&pairs)?
        }
    };

    write_report(config, &report)?;
    for (key, value) in &report.aggregates {
        println!("{key}: {value:.4}");
    }
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    println!("report -> {}", config.output.display());
    Ok(EXIT_SUCCESS)
}

/// Sweep pi over the caption set: scores are computed once per unit and
/// re-partitioned per pi; factuality and coverage run on each corrected
/// caption. Prints the per-pi trade-off table.
pub fn cmd_sweep(
    config: &RunConfig,
    captions_file: &Path,
    coverage_file: &Path,
    pi_values: &[f64],
) -> Result<i32, CliError> {
    let gateway = config.build_gateway()?;
    let pipeline_config = config
        .pipeline
        .clone()
        .ok_or_else(|| CliError::Config("sweep requires a [pipeline] section".into()))?;
    let items = datasets::load_factuality_items(captions_file)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let coverage_items = datasets::load_coverage_items(coverage_file)
        .map_err(|e| CliError::Config(e.to_string()))?;
    if pi_values.is_empty() {
        return Err(CliError::Config("pi list must be non-empty".into()));
    }
    let judge = config.role_endpoint("judge", &config.roles.judge)?;
    let answerer = config.role_endpoint("answerer", &config.roles.answerer)?;
    let harness = Harness::new(&gateway)
        .with_templates(config.judge_templates.clone())?
        .with_config_digest(config.config_digest.clone());
    let report = harness.run_pi_sweep(
        pipeline_config,
        pi_values,
        &items,
        judge,
        &coverage_items,
        answerer,
    )?;

    write_report(config, &report)?;
    println!("pi\tfactuality\tcoverage\tflagged");
    for &pi in pi_values {
        let key = crate::harness::pi_key(pi);
        let factuality = report.aggregates.get(&format!("mean_factuality_pi_{key}"));
        let coverage = report.aggregates.get(&format!("mean_coverage_pi_{key}"));
        let flagged = report.aggregates.get(&format!("mean_flagged_pi_{key}"));
        println!(
            "{pi}\t{}\t{}\t{}",
            factuality.map_or("-".into(), |v| format!("{v:.4}")),
            coverage.map_or("-".into(), |v| format!("{v:.4}")),
            flagged.map_or("-".into(), |v| format!("{v:.2}")),
        );
    }
    println!("report -> {}", config.output.display());
    Ok(EXIT_SUCCESS)
}

/// Generate meta-evaluation variant sets from clean captions using the
/// bound generator endpoint.
pub fn cmd_author_variants(config: &RunConfig, clean_file: &Path) -> Result<i32, CliError> {
    let gateway = config.build_gateway()?;
    let inputs: Vec<authoring::CleanCaption> =
        datasets::read_jsonl(clean_file).map_err(|e| CliError::Config(e.to_string()))?;
    let generator = config.role_endpoint("generator", &config.roles.generator)?;
    let mut sets = Vec::with_capacity(inputs.len());
    for input in &inputs {
        sets.push(authoring::author_variant_set(&gateway, generator, input)?);
    }
    datasets::write_jsonl(&config.output, &sets)?;
    println!(
        "authored {} variant sets -> {}",
        sets.len(),
        config.output.display()
    );
    Ok(EXIT_SUCCESS)
}

fn write_report(config: &RunConfig, report: &EvalReport) -> Result<(), CliError> {
    if let Some(parent) = config.output.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    report.save(&config.output)?;
    if config.format == OutputFormat::Csv {
        let csv_path = config.output.with_extension("csv");
        std::fs::write(&csv_path, report.per_item_csv()?)?;
    }
    Ok(())
}

/// Parse a comma-separated method list ("confidence,isolation").
pub fn parse_methods(raw: &str) -> Result<BTreeSet<DetectionMethod>, CliError> {
    let mut methods = BTreeSet::new();
    for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let method = match part {
            "confidence" => DetectionMethod::Confidence,
            "consistency" => DetectionMethod::Consistency,
            "isolation" => DetectionMethod::Isolation,
            other => {
                return Err(CliError::Config(format!(
                    "unknown detection method {other:?}"
                )))
            }
        };
        methods.insert(method);
    }
    if methods.is_empty() {
        return Err(CliError::Config("no detection methods selected".into()));
    }
    Ok(methods)
}

/// Parse a comma-separated list of numbers ("1.0,0.5,0.3").
pub fn parse_f64_list(raw: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<f64>()
                .map_err(|e| CliError::Config(format!("bad number {p:?}: {e}")))
        })
        .collect()
}

/// Parse comma-separated bin edges ("0,64,128,192").
pub fn parse_usize_list(raw: &str) -> Result<Vec<usize>, CliError> {
    raw.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<usize>()
                .map_err(|e| CliError::Config(format!("bad edge {p:?}: {e}")))
        })
        .collect()
}
