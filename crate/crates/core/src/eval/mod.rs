//! Scoring, fairness metrics and report generation.
//!
//! A sample is classified fake when `score >= threshold`; ties at the threshold count as
//! fake. Metrics that are undefined for a subset (no positives, a single class, no rows)
//! are `None` and serialize as JSON `null`, never as zero.

mod json;
mod metrics;
mod report;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, DemographicGroup, Gender, Label, Race, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::image::ImageStore;
use crate::loss::sigmoid;
use crate::nn::{Network, ParamVector, Real};
use crate::sam::make_batch;

pub use self::json::JsonNode;
pub use self::metrics::{
    area_under_curve, max_disparity, overall_accuracy, per_group_accuracy, summarize,
    true_positive_rate, MetricSummary,
};
pub use self::report::{build_report, FairnessReport, MarginalTable};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Rows scored per forward pass in [`predict`].
const PREDICT_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub sample_id: String,
    /// Probability that the sample is fake.
    pub score: f64,
    pub true_label: Label,
    pub group: DemographicGroup,
}

impl PredictionRow {
    pub fn new(sample_id: impl Into<String>, score: f64, true_label: Label, group: DemographicGroup) -> Self {
        Self {
            sample_id: sample_id.into(),
            score,
            true_label,
            group,
        }
    }

    pub fn predicted_fake(&self, threshold: f64) -> bool {
        self.score >= threshold
    }

    pub fn is_correct(&self, threshold: f64) -> bool {
        self.predicted_fake(threshold) == (self.true_label == Label::Fake)
    }
}

/// Scored samples with unique ids and finite scores in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    rows: Vec<PredictionRow>,
}

impl PredictionSet {
    pub fn new(rows: Vec<PredictionRow>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(rows.len());
        for r in &rows {
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::DuplicateId(r.sample_id.clone()));
            }
            if !r.score.is_finite() || !(0.0..=1.0).contains(&r.score) {
                return Err(Error::NonFinite(format!("score {} of `{}`", r.score, r.sample_id)));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[PredictionRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn group_rows(&self, group: DemographicGroup) -> Vec<&PredictionRow> {
        self.rows.iter().filter(|r| r.group == group).collect()
    }

    /// Parses a predictions CSV with header `sample_id,score,true_label,gender,race`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.iter().ne(CSV_HEADER) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("expected header `{}`", CSV_HEADER.join(",")),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.deserialize::<CsvRow>().enumerate() {
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message,
            };
            let rec = rec.map_err(|e| parse_err(e.to_string()))?;
            let label = Label::from_u8(rec.true_label)
                .ok_or_else(|| parse_err(format!("true_label `{}` is not 0 or 1", rec.true_label)))?;
            let gender = Gender::from_token(&rec.gender)
                .ok_or_else(|| parse_err(format!("unknown gender `{}`", rec.gender)))?;
            let race =
                Race::from_token(&rec.race).ok_or_else(|| parse_err(format!("unknown race `{}`", rec.race)))?;
            rows.push(PredictionRow::new(rec.sample_id, rec.score, label, DemographicGroup::new(gender, race)));
        }
        Self::new(rows)
    }

    /// Writes the CSV form; scores use the shortest exact decimal form so reading back is lossless.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        for r in &self.rows {
            writer.serialize(CsvRow {
                sample_id: r.sample_id.clone(),
                score: r.score,
                true_label: r.true_label.as_u8(),
                gender: r.group.gender.token().to_string(),
                race: r.group.race.token().to_string(),
            })?;
        }
        writer.flush()?;
        Ok(())
    }
}

pub const CSV_HEADER: [&str; 5] = ["sample_id", "score", "true_label", "gender", "race"];

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    sample_id: String,
    score: f64,
    true_label: u8,
    gender: String,
    race: String,
}

/// Scores every test-split sample: `score = sigmoid(fake logit)`.
pub fn predict<T: Real>(
    net: &Network,
    params: &ParamVector<T>,
    manifest: &DatasetManifest,
    images: &dyn ImageStore,
) -> Result<PredictionSet> {
    let records: Vec<&SampleRecord> = manifest.split(Split::Test).collect();
    if records.is_empty() {
        return Err(Error::invalid("test split is empty"));
    }
    let mut rows = Vec::with_capacity(records.len());
    for chunk in records.chunks(PREDICT_CHUNK) {
        let batch = make_batch(chunk, images)?;
        let out = net.forward(params, &batch)?;
        for (rec, logit) in chunk.iter().zip(out.fake_logits) {
            rows.push(PredictionRow::new(rec.id.clone(), sigmoid(logit), rec.label, rec.group));
        }
    }
    PredictionSet::new(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(i: usize) -> DemographicGroup {
        DemographicGroup::from_index(i).unwrap()
    }

    #[test]
    fn duplicate_ids_rejected() {
        let rows = vec![
            PredictionRow::new("a", 0.2, Label::Real, group(0)),
            PredictionRow::new("a", 0.7, Label::Fake, group(1)),
        ];
        assert!(matches!(PredictionSet::new(rows), Err(Error::DuplicateId(_))));
        let bad = vec![PredictionRow::new("b", f64::NAN, Label::Real, group(0))];
        assert!(PredictionSet::new(bad).is_err());
    }

    #[test]
    fn zero_logit_scores_one_half() {
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("predictions.csv");
        let set = PredictionSet::new(vec![
            PredictionRow::new("x,1", 0.1 + 0.2, Label::Fake, group(5)),
            PredictionRow::new("y", 1.0 / 3.0, Label::Real, group(6)),
        ])
        .unwrap();
        set.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("sample_id,score,true_label,gender,race\n"));
        assert_eq!(PredictionSet::read_csv(&path).unwrap(), set);
    }

    #[test]
    fn csv_rejects_bad_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "sample_id,score,true_label,gender,race\na,0.5,1,X,Black\n").unwrap();
        let err = PredictionSet::read_csv(&path).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("`X`"), "{err}");
        std::fs::write(&path, "id,score\n").unwrap();
        assert!(PredictionSet::read_csv(&path).is_err());
    }
}
