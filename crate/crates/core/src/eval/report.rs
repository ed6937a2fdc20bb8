use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::auroc::{image_auroc, pixel_auroc};
use super::bench::LatencyReport;
use crate::anomaly::infer_samples;
use crate::data::{DatasetSplits, Label};
use crate::error::{Error, Result};
use crate::model::DistillModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub category: String,
    pub image_auroc: f64,
    /// Absent when the test set has no ground-truth masks.
    pub pixel_auroc: Option<f64>,
    pub n_good: usize,
    pub n_defect: usize,
}

/// One test image's score, for CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub source_id: String,
    pub label: Label,
    pub score: f64,
}

/// Flattens a serializable record into sorted `key=value` lines.
pub fn key_values<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_value(value).expect("plain record");
    let mut out = String::new();
    if let serde_json::Value::Object(map) = json {
        let mut entries: Vec<_> = map.into_iter().collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for (k, v) in entries {
            let v = match v {
                serde_json::Value::String(s) => s,
                serde_json::Value::Null => "none".into(),
                other => other.to_string(),
            };
            let _ = writeln!(out, "{k}={v}");
        }
    }
    out
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let pixel = self
            .pixel_auroc
            .map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<14} {:>11} {:>11} {:>7} {:>9}",
            "category", "image_auroc", "pixel_auroc", "n_good", "n_defect"
        );
        let _ = writeln!(
            s,
            "{:<14} {:>11.4} {:>11} {:>7} {:>9}",
            self.category, self.image_auroc, pixel, self.n_good, self.n_defect
        );
        s
    }

    pub fn to_key_values(&self) -> String {
        key_values(self)
    }
}

impl LatencyReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "device        {}", self.device_descriptor);
        let _ = writeln!(
            s,
            "runs          {} (+{} warmup)",
            self.n_runs, self.warmup_runs
        );
        let _ = writeln!(s, "mean          {:.3} ms", self.latency_mean_ms);
        let _ = writeln!(s, "median        {:.3} ms", self.latency_median_ms);
        let _ = writeln!(s, "p95           {:.3} ms", self.latency_p95_ms);
        let _ = writeln!(s, "fps           {:.2}", self.fps);
        if self.noisy {
            let _ = writeln!(s, "warning: latency spread is high; results are noisy");
        }
        s
    }

    pub fn to_key_values(&self) -> String {
        key_values(self)
    }
}

/// Scores every test image and computes image- and (when masks exist)
/// pixel-level AUROC.
pub fn evaluate(
    model: &DistillModel,
    splits: &DatasetSplits,
    batch_size: usize,
) -> Result<(EvalReport, Vec<ScoreRow>)> {
    if splits.test.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} has no test images",
            splits.category
        )));
    }
    let results = infer_samples(model, &splits.test, batch_size)?;
    let labels: Vec<bool> = splits
        .test
        .iter()
        .map(|s| s.label == Label::Defect)
        .collect();
    let scores: Vec<f64> = results.iter().map(|r| r.score).collect();
    let image = image_auroc(&scores, &labels)?;
    let pixel = if splits.has_masks() {
        let masks: Vec<_> = splits
            .test
            .iter()
            .map(|s| s.mask_at(model.input_size))
            .collect();
        let maps: Vec<_> = results.into_iter().map(|r| r.map).collect();
        Some(pixel_auroc(&maps, &masks)?)
    } else {
        None
    };
    let rows = splits
        .test
        .iter()
        .zip(&scores)
        .map(|(s, &score)| ScoreRow {
            source_id: s.source_id.clone(),
            label: s.label,
            score,
        })
        .collect();
    Ok((
        EvalReport {
            category: splits.category.clone(),
            image_auroc: image,
            pixel_auroc: pixel,
            n_good: splits.n_test_good(),
            n_defect: splits.n_test_defect(),
        },
        rows,
    ))
}

pub fn write_scores_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_values_are_sorted_and_flat() {
        let r = EvalReport {
            category: "grating".into(),
            image_auroc: 0.5,
            pixel_auroc: None,
            n_good: 2,
            n_defect: 3,
        };
        assert_eq!(
            r.to_key_values(),
            "category=grating\nimage_auroc=0.5\nn_defect=3\nn_good=2\npixel_auroc=none\n"
        );
        assert!(r.to_table().contains("n/a"));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let rows = vec![ScoreRow {
            source_id: "test/good/000".into(),
            label: Label::Good,
            score: 1.25,
        }];
        write_scores_csv(&path, &rows).unwrap();
        assert_eq!(
            std::fs::read_to_string(path).unwrap(),
            "source_id,label,score\ntest/good/000,good,1.25\n"
        );
    }
}
