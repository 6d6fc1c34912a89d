//! Evaluation reports with full provenance. Every aggregate must be
//! recomputable from the per-item rows; `load` re-derives them and
//! refuses reports that do not check out.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::harness::HarnessError;
use crate::hashing::sha256_hex;
use crate::metrics::{self, BinaryScoredSet, RankSeries, ScoredItem};
use crate::serde_util::score_from_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Factuality,
    Coverage,
    MetaEval,
    Detection,
    PiSweep,
    HumanCorrelation,
}

/// When the run happened, recorded only on request since wall-clock
/// stamps break byte-identical reruns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeSpan {
    pub started_at: String,
    pub finished_at: String,
}

/// Where a report's numbers came from: endpoint roles, template digests,
/// threshold and clamp constants, and any sampling seeds.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub endpoints: BTreeMap<String, String>,
    pub template_digests: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<TimeSpan>,
}

/// One evaluation run: per-item rows, aggregates derived from them, and
/// the provenance needed to reproduce both.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: ReportKind,
    pub run_id: String,
    pub config_digest: String,
    pub per_item: Vec<Value>,
    pub aggregates: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attachments: BTreeMap<String, Value>,
    pub provenance: Provenance,
}

impl EvalReport {
    pub(crate) fn build(
        kind: ReportKind,
        config_digest: String,
        provenance: Provenance,
        per_item: Vec<Value>,
        aggregates: BTreeMap<String, f64>,
        warnings: Vec<String>,
        attachments: BTreeMap<String, Value>,
    ) -> Self {
        let payload =
            serde_json::to_vec(&(&kind, &config_digest, &per_item)).expect("report rows serialize");
        let run_id = sha256_hex(&payload)[..16].to_string();
        Self {
            kind,
            run_id,
            config_digest,
            per_item,
            aggregates,
            warnings,
            attachments,
            provenance,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| HarnessError::Dataset(format!("encode report: {e}")))?;
        std::fs::write(path, body + "\n")?;
        Ok(())
    }

    /// Parse a report and verify that its aggregates match a fresh
    /// recomputation from the per-item rows.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let body = std::fs::read_to_string(path.as_ref())?;
        let report: EvalReport = serde_json::from_str(&body)
            .map_err(|e| HarnessError::Dataset(format!("parse report: {e}")))?;
        report.verify_consistency()?;
        Ok(report)
    }

    pub fn verify_consistency(&self) -> Result<(), HarnessError> {
        let recomputed = self.recompute_aggregates()?;
        if recomputed.len() != self.aggregates.len() {
            return Err(HarnessError::Inconsistent(format!(
                "aggregate count mismatch: stored {}, recomputed {}",
                self.aggregates.len(),
                recomputed.len()
            )));
        }
        for (key, stored) in &self.aggregates {
            let fresh = recomputed.get(key).ok_or_else(|| {
                HarnessError::Inconsistent(format!("aggregate {key} not recomputable"))
            })?;
            if (stored - fresh).abs() > 1e-9 {
                return Err(HarnessError::Inconsistent(format!(
                    "aggregate {key}: stored {stored}, recomputed {fresh}"
                )));
            }
        }
        Ok(())
    }

    /// Re-derive every aggregate from the per-item rows.
    pub fn recompute_aggregates(&self) -> Result<BTreeMap<String, f64>, HarnessError> {
        match self.kind {
            ReportKind::Factuality => self.recompute_factuality(),
            ReportKind::Coverage => self.recompute_coverage(),
            ReportKind::MetaEval => self.recompute_meta_eval(),
            ReportKind::Detection => self.recompute_detection(),
            ReportKind::PiSweep => self.recompute_pi_sweep(),
            ReportKind::HumanCorrelation => self.recompute_human_correlation(),
        }
    }

    fn recompute_factuality(&self) -> Result<BTreeMap<String, f64>, HarnessError> {
        let scores = self.numeric_column("factuality")?;
        Ok(BTreeMap::from([(
            "mean_factuality".to_string(),
            mean(&scores),
        )]))
    }

    fn recompute_coverage(&self) -> Result<BTreeMap<String, f64>, HarnessError> {
        let mut correct = 0usize;
        for row in &self.per_item {
            match row.get("outcome").and_then(Value::as_str) {
                Some("correct") => correct += 1,
                Some("incorrect") | Some("unparseable") => {}
                other => {
                    return Err(HarnessError::Inconsistent(format!(
                        "bad outcome {other:?} in coverage row"
                    )))
                }
            }
        }
        if self.per_item.is_empty() {
            return Err(HarnessError::Inconsistent("empty coverage report".into()));
        }
        Ok(BTreeMap::from([(
            "coverage_accuracy".to_string(),
            correct as f64 / self.per_item.len() as f64,
        )]))
    }

    fn recompute_meta_eval(&self) -> Result<BTreeMap<String, f64>, HarnessError> {
        let mut aggregates = BTreeMap::new();
        let mut means = BTreeMap::new();
        for class in ["clean", "object", "attribution", "relation"] {
            let scores = self.numeric_column(class)?;
            let class_mean = mean(&scores);
            means.insert(class.to_string(), class_mean);
            aggregates.insert(format!("mean_{class}"), class_mean);
        }
        let clean = means["clean"];
        let strictly_highest = means
            .iter()
            .filter(|(class, _)| class.as_str() != "clean")
            .all(|(_, &m)| clean > m);
        aggregates.insert(
            "clean_ranks_highest".to_string(),
            if strictly_highest { 1.0 } else { 0.0 },
        );
        Ok(aggregates)
    }

    fn recompute_detection(&self) -> Result<BTreeMap<String, f64>, HarnessError> {
        let mut by_method: BTreeMap<String, Vec<ScoredItem>> = BTreeMap::new();
        for row in &self.per_item {
            let method = row
                .get("method")
                .and_then(Value::as_str)
                .ok_or_else(|| HarnessError::Inconsistent("detection row missing method".into()))?
                .to_string();
            let score = row
                .get("score")
                .and_then(score_from_json)
                .ok_or_else(|| HarnessError::Inconsistent("detection row missing score".into()))?;
            let label = row
                .get("label")
                .and_then(Value::as_str)
                .ok_or_else(|| HarnessError::Inconsistent("detection row missing label".into()))?;
            by_method.entry(method).or_default().push(ScoredItem {
                score,
                label: label == "hallucination",
            });
        }
        let mut aggregates = BTreeMap::new();
        for (method, items) in by_method {
            let set = BinaryScoredSet::new(items);
            aggregates.insert(format!("auroc_{method}"), metrics::auroc(&set)?);
            aggregates.insert(format!("fpr95_{method}"), metrics::fpr_at_tpr(&set, 0.95)?);
        }
        Ok(aggregates)
    }

    fn recompute_pi_sweep(&self) -> Result<BTreeMap<String, f64>, HarnessError> {
        let mut by_pi: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
        for row in &self.per_item {
            let pi = row
                .get("pi")
                .and_then(score_from_json)
                .ok_or_else(|| HarnessError::Inconsistent("sweep row missing pi".into()))?;
            let factuality = row
                .get("factuality")
                .and_then(Value::as_f64)
                .ok_or_else(|| HarnessError::Inconsistent("sweep row missing factuality".into()))?;
            let coverage = row
                .get("coverage")
                .and_then(Value::as_f64)
                .ok_or_else(|| HarnessError::Inconsistent("sweep row missing coverage".into()))?;
            let flagged = row
                .get("flagged")
                .and_then(Value::as_f64)
                .ok_or_else(|| HarnessError::Inconsistent("sweep row missing flagged".into()))?;
            by_pi
                .entry(pi_key(pi))
                .or_default()
                .push((factuality, coverage, flagged));
        }
        let mut aggregates = BTreeMap::new();
        for (pi_key, cells) in by_pi {
            let n = cells.len() as f64;
            aggregates.insert(
                format!("mean_factuality_pi_{pi_key}"),
                cells.iter().map(|c| c.0).sum::<f64>() / n,
            );
            aggregates.insert(
                format!("mean_coverage_pi_{pi_key}"),
                cells.iter().map(|c| c.1).sum::<f64>() / n,
            );
            aggregates.insert(
                format!("mean_flagged_pi_{pi_key}"),
                cells.iter().map(|c| c.2).sum::<f64>() / n,
            );
        }
        Ok(aggregates)
    }

    fn recompute_human_correlation(&self) -> Result<BTreeMap<String, f64>, HarnessError> {
        let mut by_method: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for row in &self.per_item {
            let method = row
                .get("method")
                .and_then(Value::as_str)
                .ok_or_else(|| HarnessError::Inconsistent("pair row missing method".into()))?
                .to_string();
            let human = row
                .get("human")
                .and_then(Value::as_f64)
                .ok_or_else(|| HarnessError::Inconsistent("pair row missing human".into()))?;
            let metric = row
                .get("metric")
                .and_then(Value::as_f64)
                .ok_or_else(|| HarnessError::Inconsistent("pair row missing metric".into()))?;
            by_method.entry(method).or_default().push((human, metric));
        }
        let mut aggregates = BTreeMap::new();
        for (method, pairs) in by_method {
            let rho = metrics::spearman_rho(&RankSeries::new(pairs))?;
            aggregates.insert(format!("rho_{method}"), rho);
        }
        Ok(aggregates)
    }

    fn numeric_column(&self, key: &str) -> Result<Vec<f64>, HarnessError> {
        self.per_item
            .iter()
            .map(|row| {
                row.get(key).and_then(Value::as_f64).ok_or_else(|| {
                    HarnessError::Inconsistent(format!("row missing numeric field {key:?}"))
                })
            })
            .collect()
    }

    /// Flatten the per-item rows into CSV, one column per key seen in
    /// any row, in sorted order.
    pub fn per_item_csv(&self) -> Result<String, HarnessError> {
        let mut columns: Vec<String> = Vec::new();
        for row in &self.per_item {
            if let Value::Object(map) = row {
                for key in map.keys() {
                    if !columns.contains(key) {
                        columns.push(key.clone());
                    }
                }
            }
        }
        columns.sort();
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(&columns)
            .map_err(|e| HarnessError::Dataset(format!("csv: {e}")))?;
        for row in &self.per_item {
            let record: Vec<String> = columns
                .iter()
                .map(|col| match row.get(col) {
                    None | Some(Value::Null) => String::new(),
                    Some(Value::String(s)) => s.clone(),
                    Some(other) => other.to_string(),
                })
                .collect();
            writer
                .write_record(&record)
                .map_err(|e| HarnessError::Dataset(format!("csv: {e}")))?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| HarnessError::Dataset(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| HarnessError::Dataset(format!("csv: {e}")))
    }
}

/// Compact key for a pi value usable inside aggregate names.
pub fn pi_key(pi: f64) -> String {
    if pi.is_infinite() {
        "inf".to_string()
    } else {
        format!("{pi}")
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn meta_report(clean: f64, object: f64) -> EvalReport {
        let rows = vec![json!({
            "image_digest": "d",
            "clean": clean,
            "object": object,
            "attribution": 0.5,
            "relation": 0.5,
        })];
        let aggregates = BTreeMap::from([
            ("mean_clean".to_string(), clean),
            ("mean_object".to_string(), object),
            ("mean_attribution".to_string(), 0.5),
            ("mean_relation".to_string(), 0.5),
            (
                "clean_ranks_highest".to_string(),
                if clean > object && clean > 0.5 {
                    1.0
                } else {
                    0.0
                },
            ),
        ]);
        EvalReport::build(
            ReportKind::MetaEval,
            "cfg".into(),
            Provenance::default(),
            rows,
            aggregates,
            vec![],
            BTreeMap::new(),
        )
    }

    #[test]
    fn consistent_report_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let report = meta_report(0.9, 0.4);
        report.save(&path).unwrap();
        let back = EvalReport::load(&path).unwrap();
        assert_eq!(back.run_id, report.run_id);
        assert_eq!(back.aggregates["clean_ranks_highest"], 1.0);
    }

    #[test]
    fn tampered_aggregate_is_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let mut report = meta_report(0.9, 0.4);
        report.aggregates.insert("mean_clean".into(), 0.1);
        report.save(&path).unwrap();
        let err = EvalReport::load(&path).unwrap_err();
        assert!(matches!(err, HarnessError::Inconsistent(_)));
    }

    #[test]
    fn run_id_is_deterministic_in_inputs() {
        assert_eq!(meta_report(0.9, 0.4).run_id, meta_report(0.9, 0.4).run_id);
        assert_ne!(meta_report(0.9, 0.4).run_id, meta_report(0.8, 0.4).run_id);
    }

    #[test]
    fn csv_flattening_covers_all_columns() {
        let report = meta_report(0.9, 0.4);
        let csv = report.per_item_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "attribution,clean,image_digest,object,relation"
        );
        assert_eq!(lines.next().unwrap(), "0.5,0.9,d,0.4,0.5");
    }
}
