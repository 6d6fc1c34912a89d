//! Line-delimited JSON dataset ingestion. Every loader validates the
//! record invariants and reports the offending line number on failure.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::detectors::DetectionSample;
use crate::gateway::ImageRef;
use crate::harness::HarnessError;
use crate::pipeline::CaptionRecord;

/// One multiple-choice question about an image, answerable from a good
/// caption alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageItem {
    pub image: ImageRef,
    pub question: String,
    pub options: Vec<String>,
    pub answer_index: usize,
}

impl CoverageItem {
    pub fn validate(&self) -> Result<(), String> {
        if !(2..=4).contains(&self.options.len()) {
            return Err(format!(
                "question needs 2..=4 options, got {}",
                self.options.len()
            ));
        }
        if self.answer_index >= self.options.len() {
            return Err(format!(
                "answer_index {} out of range for {} options",
                self.answer_index,
                self.options.len()
            ));
        }
        Ok(())
    }
}

/// One meta-evaluation record: a clean caption, three perturbed variants
/// with injected falsehoods, and an independent reference description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptionVariantSet {
    pub image: ImageRef,
    pub clean: String,
    #[serde(rename = "object")]
    pub object_variant: String,
    #[serde(rename = "attribution")]
    pub attribution_variant: String,
    #[serde(rename = "relation")]
    pub relation_variant: String,
    pub reference: String,
}

impl CaptionVariantSet {
    pub fn validate(&self) -> Result<(), String> {
        for (name, text) in [
            ("clean", &self.clean),
            ("object", &self.object_variant),
            ("attribution", &self.attribution_variant),
            ("relation", &self.relation_variant),
            ("reference", &self.reference),
        ] {
            if text.trim().is_empty() {
                return Err(format!("{name} caption is empty"));
            }
        }
        Ok(())
    }

    /// The four judged variants in report order.
    pub fn variants(&self) -> [(&'static str, &str); 4] {
        [
            ("clean", self.clean.as_str()),
            ("object", self.object_variant.as_str()),
            ("attribution", self.attribution_variant.as_str()),
            ("relation", self.relation_variant.as_str()),
        ]
    }
}

/// A caption to be judged (or corrected) together with the reference
/// description of its image. The reference is mandatory: factuality
/// judging refuses to run without one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactualityItem {
    pub image: ImageRef,
    pub caption: String,
    pub reference: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
}

/// One human preference decision over a caption pair, with each scored
/// metric's [score_A, score_B] values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HumanPreferencePair {
    pub pair_id: String,
    pub human_winner: Winner,
    pub scores: BTreeMap<String, [f64; 2]>,
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, HarnessError> {
    let path = path.as_ref();
    let file =
        File::open(path).map_err(|e| HarnessError::Dataset(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::Dataset(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| {
            HarnessError::Dataset(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_jsonl<T: Serialize>(
    path: impl AsRef<Path>,
    records: &[T],
) -> Result<(), HarnessError> {
    let mut file = File::create(path.as_ref())
        .map_err(|e| HarnessError::Dataset(format!("{}: {e}", path.as_ref().display())))?;
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| HarnessError::Dataset(format!("encode: {e}")))?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

pub fn load_coverage_items(path: impl AsRef<Path>) -> Result<Vec<CoverageItem>, HarnessError> {
    let items: Vec<CoverageItem> = read_jsonl(&path)?;
    for (i, item) in items.iter().enumerate() {
        item.validate()
            .map_err(|e| HarnessError::Dataset(format!("coverage item {}: {e}", i + 1)))?;
    }
    Ok(items)
}

pub fn load_variant_sets(path: impl AsRef<Path>) -> Result<Vec<CaptionVariantSet>, HarnessError> {
    let sets: Vec<CaptionVariantSet> = read_jsonl(&path)?;
    for (i, set) in sets.iter().enumerate() {
        set.validate()
            .map_err(|e| HarnessError::Dataset(format!("variant set {}: {e}", i + 1)))?;
    }
    Ok(sets)
}

pub fn load_detection_samples(
    path: impl AsRef<Path>,
) -> Result<Vec<DetectionSample>, HarnessError> {
    let mut samples: Vec<DetectionSample> = read_jsonl(&path)?;
    for sample in &mut samples {
        sample.sort_mentions();
    }
    Ok(samples)
}

pub fn load_caption_records(path: impl AsRef<Path>) -> Result<Vec<CaptionRecord>, HarnessError> {
    let records: Vec<CaptionRecord> = read_jsonl(&path)?;
    for (i, record) in records.iter().enumerate() {
        if record.text.trim().is_empty() {
            return Err(HarnessError::Dataset(format!("caption {} is empty", i + 1)));
        }
    }
    Ok(records)
}

pub fn load_factuality_items(path: impl AsRef<Path>) -> Result<Vec<FactualityItem>, HarnessError> {
    let items: Vec<FactualityItem> = read_jsonl(&path)?;
    for (i, item) in items.iter().enumerate() {
        if item.caption.trim().is_empty() || item.reference.trim().is_empty() {
            return Err(HarnessError::Dataset(format!(
                "item {}: caption and reference must be non-empty",
                i + 1
            )));
        }
    }
    Ok(items)
}

pub fn load_human_pairs(path: impl AsRef<Path>) -> Result<Vec<HumanPreferencePair>, HarnessError> {
    read_jsonl(path)
}
