//! Comparison table over finished runs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::RunManifest;

/// Percentage-point difference with an explicit sign, one decimal.
pub fn format_delta(new: f64, old: f64) -> String {
    let d = (new - old) * 100.0;
    // Avoid "-0.0" for differences that round to nothing.
    if d.abs() < 0.05 {
        return "+0.0".into();
    }
    format!("{d:+.1}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub strategy: String,
    pub aspire: bool,
    pub average_accuracy: f64,
    pub worst_group_accuracy: f64,
    /// What the deltas compare against: `baseline` (the matching run without
    /// augmentation) or `base_model` (the run's own step-1 classifier).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_average: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_worst_group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset_hash: String,
    pub rows: Vec<ReportRow>,
}

impl Report {
    /// One row per run. Every run must share the training-set hash.
    pub fn build(runs: &[(String, RunManifest)]) -> Result<Self> {
        let (_, first) = runs.first().ok_or(Error::EmptyReport)?;
        for (name, m) in runs {
            if m.dataset_hash != first.dataset_hash {
                return Err(Error::DatasetMismatch {
                    run: name.clone(),
                    expected: first.dataset_hash.clone(),
                    found: m.dataset_hash.clone(),
                });
            }
        }
        let rows = runs
            .iter()
            .map(|(name, m)| {
                let mut row = ReportRow {
                    run: name.clone(),
                    strategy: m.strategy.clone(),
                    aspire: m.aspire,
                    average_accuracy: m.metrics.average_accuracy,
                    worst_group_accuracy: m.metrics.worst_group_accuracy,
                    reference: None,
                    delta_average: None,
                    delta_worst_group: None,
                };
                if m.aspire {
                    let baseline = runs
                        .iter()
                        .map(|(_, b)| b)
                        .find(|b| !b.aspire && b.strategy == m.strategy && b.test_hash == m.test_hash);
                    let reference = match (baseline, &m.base_metrics) {
                        (Some(b), _) => Some(("baseline", &b.metrics)),
                        (None, Some(base)) => Some(("base_model", base)),
                        (None, None) => None,
                    };
                    if let Some((label, r)) = reference {
                        row.reference = Some(label.to_owned());
                        row.delta_average = Some(format_delta(m.metrics.average_accuracy, r.average_accuracy));
                        row.delta_worst_group =
                            Some(format_delta(m.metrics.worst_group_accuracy, r.worst_group_accuracy));
                    }
                }
                row
            })
            .collect();
        Ok(Self {
            dataset_hash: first.dataset_hash.clone(),
            rows,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("bad report json: {e}")))
    }

    pub fn to_table(&self) -> String {
        let header = ["run", "strategy", "aspire", "avg", "worst", "Δavg", "Δworst"];
        let body: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.run.clone(),
                    r.strategy.clone(),
                    if r.aspire { "yes" } else { "no" }.to_owned(),
                    format!("{:.1}", r.average_accuracy * 100.0),
                    format!("{:.1}", r.worst_group_accuracy * 100.0),
                    r.delta_average.clone().unwrap_or_else(|| "-".into()),
                    r.delta_worst_group.clone().unwrap_or_else(|| "-".into()),
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        };
        line(&mut out, &header.map(String::from));
        for row in &body {
            line(&mut out, row);
        }
        out
    }
}
