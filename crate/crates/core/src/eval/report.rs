use super::json::JsonNode;
use super::metrics::{max_disparity, summarize, MetricSummary};
use super::{PredictionRow, PredictionSet};
use crate::data::{DemographicGroup, Gender, Race};
use crate::error::{Error, Result};

/// Decimal places of fractional values in the serialized report.
const FRACTION_DECIMALS: usize = 6;
/// Decimal places of `_pct` fields.
const PCT_DECIMALS: usize = 2;

/// Metrics aggregated over a demographic attribute, with the accuracy gap across its values.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTable {
    pub entries: Vec<(String, MetricSummary)>,
    /// `None` when no value of the attribute has rows.
    pub max_disparity_accuracy: Option<f64>,
}

/// A marginal value's name and the groups it covers.
type MarginalKey = (String, Box<dyn Fn(&DemographicGroup) -> bool>);

impl MarginalTable {
    fn build(rows: &[PredictionRow], keys: Vec<MarginalKey>, threshold: f64) -> Self {
        let entries: Vec<(String, MetricSummary)> = keys
            .into_iter()
            .map(|(name, pred)| {
                let subset: Vec<&PredictionRow> = rows.iter().filter(|r| pred(&r.group)).collect();
                (name, summarize(&subset, threshold))
            })
            .collect();
        let accs: Vec<Option<f64>> = entries.iter().map(|(_, m)| m.accuracy).collect();
        Self {
            max_disparity_accuracy: max_disparity(&accs).ok(),
            entries,
        }
    }

    pub fn get(&self, key: &str) -> Option<&MetricSummary> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, m)| m)
    }

    fn to_node(&self) -> JsonNode {
        JsonNode::object([
            (
                "groups".to_string(),
                JsonNode::object(self.entries.iter().map(|(k, m)| (k.clone(), summary_node(m)))),
            ),
            (
                "max_disparity_accuracy".to_string(),
                JsonNode::fixed_opt(self.max_disparity_accuracy, FRACTION_DECIMALS),
            ),
            (
                "max_disparity_accuracy_pct".to_string(),
                JsonNode::fixed_opt(self.max_disparity_accuracy.map(|v| v * 100.0), PCT_DECIMALS),
            ),
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessReport {
    pub dataset: String,
    pub threshold: f64,
    pub overall: MetricSummary,
    /// Canonical group order; absent groups have `count == 0`.
    pub per_group: [MetricSummary; DemographicGroup::COUNT],
    pub gender_marginal: MarginalTable,
    pub race_marginal: MarginalTable,
    /// Accuracy gap over the groups with at least one row.
    pub max_disparity_accuracy: f64,
}

impl FairnessReport {
    pub fn group(&self, group: DemographicGroup) -> &MetricSummary {
        &self.per_group[group.index()]
    }

    pub fn to_json_node(&self) -> JsonNode {
        let per_group = DemographicGroup::ALL.iter().zip(&self.per_group).map(|(g, m)| {
            let mut node = summary_node(m);
            if let JsonNode::Object(map) = &mut node {
                map.insert("present".into(), JsonNode::Bool(m.count > 0));
            }
            (g.code(), node)
        });
        JsonNode::object([
            ("dataset".to_string(), JsonNode::Str(self.dataset.clone())),
            ("overall".to_string(), summary_node(&self.overall)),
            ("per_group".to_string(), JsonNode::object(per_group)),
            ("gender_marginal".to_string(), self.gender_marginal.to_node()),
            ("race_marginal".to_string(), self.race_marginal.to_node()),
            (
                "max_disparity_accuracy".to_string(),
                JsonNode::fixed(self.max_disparity_accuracy, FRACTION_DECIMALS),
            ),
        ])
    }

    /// Deterministic JSON: sorted keys, fixed decimals, `null` for undefined metrics.
    pub fn to_json(&self) -> String {
        self.to_json_node().to_pretty_string()
    }
}

fn summary_node(m: &MetricSummary) -> JsonNode {
    let mut entries = vec![
        ("count".to_string(), JsonNode::Int(m.count as u64)),
        ("positives".to_string(), JsonNode::Int(m.positives as u64)),
        ("negatives".to_string(), JsonNode::Int(m.negatives as u64)),
    ];
    for (name, value) in [("accuracy", m.accuracy), ("tpr", m.tpr), ("auc", m.auc)] {
        entries.push((name.to_string(), JsonNode::fixed_opt(value, FRACTION_DECIMALS)));
        entries.push((format!("{name}_pct"), JsonNode::fixed_opt(value.map(|v| v * 100.0), PCT_DECIMALS)));
    }
    JsonNode::object(entries)
}

pub fn build_report(preds: &PredictionSet, dataset_name: &str, threshold: f64) -> Result<FairnessReport> {
    if preds.is_empty() {
        return Err(Error::invalid("cannot report on an empty prediction set"));
    }
    let rows = preds.rows();
    let per_group = DemographicGroup::ALL.map(|g| summarize(&preds.group_rows(g), threshold));
    let accs: Vec<Option<f64>> = per_group.iter().map(|m| m.accuracy).collect();
    let genders = Gender::ALL
        .iter()
        .map(|&g| {
            let pred: Box<dyn Fn(&DemographicGroup) -> bool> = Box::new(move |d| d.gender == g);
            (g.token().to_string(), pred)
        })
        .collect();
    let races = Race::ALL
        .iter()
        .map(|&r| {
            let pred: Box<dyn Fn(&DemographicGroup) -> bool> = Box::new(move |d| d.race == r);
            (r.token().to_string(), pred)
        })
        .collect();
    Ok(FairnessReport {
        dataset: dataset_name.to_string(),
        threshold,
        overall: summarize(rows, threshold),
        gender_marginal: MarginalTable::build(rows, genders, threshold),
        race_marginal: MarginalTable::build(rows, races, threshold),
        max_disparity_accuracy: max_disparity(&accs)?,
        per_group,
    })
}
