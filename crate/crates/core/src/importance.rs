//! Per-channel importance statistics and their aggregation into group
//! importance `T_i`.
//!
//! The criterion is a provenance label only: BN scaling factors, filter norms
//! and reconstruction errors all flow through the same aggregation.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::archgraph::ModelGraph;
use crate::error::{Error, Result};
use crate::grouping::{couple_channels, GroupPartition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    BnGamma,
    FilterNorm,
    ReconstructionError,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::BnGamma => "bn_gamma",
            Criterion::FilterNorm => "filter_norm",
            Criterion::ReconstructionError => "reconstruction_error",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bn_gamma" => Ok(Criterion::BnGamma),
            "filter_norm" => Ok(Criterion::FilterNorm),
            "reconstruction_error" => Ok(Criterion::ReconstructionError),
            other => Err(Error::parse("criterion", format!("unknown criterion `{other}`"))),
        }
    }
}

/// Stats document: `{criterion, scores: {layer: [..]}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsDoc {
    pub criterion: String,
    pub scores: IndexMap<String, Vec<f64>>,
}

/// Validated non-negative per-channel scores for one graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceReport {
    criterion: Criterion,
    scores: IndexMap<String, Vec<f64>>,
}

impl ImportanceReport {
    /// Validates `scores` against `graph`: every rescalable layer must be
    /// present with one score per output channel. Scores are stored as
    /// absolute values.
    pub fn new(criterion: Criterion, scores: IndexMap<String, Vec<f64>>, graph: &ModelGraph) -> Result<Self> {
        let mut scores = scores;
        for (name, values) in scores.iter_mut() {
            let layer = match graph.layer(name) {
                Some(l) if l.kind.is_prunable() => l,
                Some(_) => {
                    return Err(Error::Coverage {
                        layer: name.clone(),
                        detail: "not a prunable layer".into(),
                    })
                }
                None => {
                    return Err(Error::Coverage {
                        layer: name.clone(),
                        detail: "no such layer in the model".into(),
                    })
                }
            };
            if values.len() != layer.out_channels {
                return Err(Error::Shape {
                    layer: name.clone(),
                    expected: layer.out_channels,
                    got: values.len(),
                });
            }
            if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                return Err(Error::parse(
                    format!("scores.{name}"),
                    format!("non-finite score {bad}"),
                ));
            }
            for v in values.iter_mut() {
                *v = v.abs();
            }
        }
        let coupling = couple_channels(graph);
        for class in coupling.classes().iter().filter(|c| !c.pinned) {
            if let Some(missing) = class.layers.iter().find(|l| !scores.contains_key(*l)) {
                return Err(Error::Coverage {
                    layer: missing.clone(),
                    detail: "missing from stats".into(),
                });
            }
        }
        Ok(Self { criterion, scores })
    }

    pub fn criterion(&self) -> Criterion {
        self.criterion
    }

    pub fn scores(&self, layer: &str) -> Option<&[f64]> {
        self.scores.get(layer).map(Vec::as_slice)
    }

    pub fn layers(&self) -> impl Iterator<Item = &str> {
        self.scores.keys().map(String::as_str)
    }

    /// `N_gamma`: total number of scores.
    pub fn n_gamma(&self) -> usize {
        self.scores.values().map(Vec::len).sum()
    }

    /// Multiplies every score by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            criterion: self.criterion,
            scores: self
                .scores
                .iter()
                .map(|(n, v)| (n.clone(), v.iter().map(|x| x * k).collect()))
                .collect(),
        }
    }

    pub fn to_doc(&self) -> StatsDoc {
        StatsDoc {
            criterion: self.criterion.as_str().into(),
            scores: self.scores.clone(),
        }
    }
}

/// Parses and validates a stats document against `graph`.
pub fn load_stats(text: &str, graph: &ModelGraph) -> Result<ImportanceReport> {
    let doc: StatsDoc = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let field = if msg.contains("`criterion`") {
            "criterion"
        } else if msg.contains("`scores`") {
            "scores"
        } else {
            "document"
        };
        Error::parse(field, msg)
    })?;
    let criterion: Criterion = doc.criterion.parse()?;
    ImportanceReport::new(criterion, doc.scores, graph)
}

/// `T_1..T_G`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct GroupImportance(Vec<f64>);

impl GroupImportance {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("group importance must be finite and non-negative".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `T_i = (1/g_i) * sum |score_j|` over every channel of every layer in
/// group `i`. The denominator counts the scores in the report, which equals
/// `g_i` when the report was measured on the partitioned graph.
pub fn group_importance(report: &ImportanceReport, partition: &GroupPartition) -> Result<GroupImportance> {
    let mut values = Vec::with_capacity(partition.len());
    for (gi, group) in partition.groups().iter().enumerate() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for layer in &group.layers {
            let scores = report.scores(layer).ok_or_else(|| Error::Coverage {
                layer: layer.clone(),
                detail: format!("missing from stats (group {gi})"),
            })?;
            for s in scores {
                sum += s;
            }
            count += scores.len();
        }
        if group.channels == 0 || count == 0 {
            return Err(Error::DegeneratePartition { group: gi });
        }
        values.push(sum / count as f64);
    }
    Ok(GroupImportance(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archgraph::parse_model;
    use crate::grouping::partition_groups;

    const TOY: &str = r#"{"input_shape": [3, 8, 8], "layers": [
        {"name": "x", "kind": "input"},
        {"name": "a", "kind": "conv", "out_channels": 2, "kernel": [3, 3], "predecessors": ["x"]},
        {"name": "b", "kind": "conv", "out_channels": 3, "kernel": [3, 3], "predecessors": ["a"]},
        {"name": "gap", "kind": "global_pool", "predecessors": ["b"]},
        {"name": "fc", "kind": "linear", "out_channels": 10, "predecessors": ["gap"]}]}"#;

    #[test]
    fn load_counts_scores() {
        let g = parse_model(TOY).unwrap();
        let r = load_stats(
            r#"{"criterion": "bn_gamma", "scores": {"a": [0.1, 0.2], "b": [0.3, 0.4, 0.5]}}"#,
            &g,
        )
        .unwrap();
        assert_eq!(r.n_gamma(), 5);
        assert_eq!(r.criterion(), Criterion::BnGamma);
    }

    #[test]
    fn negative_scores_are_stored_as_magnitudes() {
        let g = parse_model(TOY).unwrap();
        let r = load_stats(
            r#"{"criterion": "bn_gamma", "scores": {"a": [-0.3, 0.2], "b": [0.3, 0.4, 0.5]}}"#,
            &g,
        )
        .unwrap();
        assert_eq!(r.scores("a").unwrap(), &[0.3, 0.2]);
    }

    #[test]
    fn missing_layer_is_a_coverage_error() {
        let g = parse_model(TOY).unwrap();
        let err = load_stats(r#"{"criterion": "bn_gamma", "scores": {"a": [0.1, 0.2]}}"#, &g).unwrap_err();
        assert!(
            matches!(err, Error::Coverage { ref layer, .. } if layer == "b"),
            "{err}"
        );
    }

    #[test]
    fn wrong_count_is_a_shape_error() {
        let g = parse_model(TOY).unwrap();
        let err = load_stats(
            r#"{"criterion": "bn_gamma", "scores": {"a": [0.1], "b": [0.3, 0.4, 0.5]}}"#,
            &g,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::Shape {
                expected: 2,
                got: 1,
                ..
            }
        ));
    }

    #[test]
    fn unknown_layers_and_criteria_are_rejected() {
        let g = parse_model(TOY).unwrap();
        let err = load_stats(
            r#"{"criterion": "bn_gamma", "scores": {"a": [1, 1], "b": [1, 1, 1], "zz": [1]}}"#,
            &g,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Coverage { ref layer, .. } if layer == "zz"));
        let err = load_stats(r#"{"criterion": "taylor", "scores": {}}"#, &g).unwrap_err();
        assert!(matches!(err, Error::Parse { ref field, .. } if field == "criterion"));
    }

    #[test]
    fn single_group_mean() {
        let g = parse_model(
            r#"{"input_shape": [3, 8, 8], "layers": [
                {"name": "x", "kind": "input"},
                {"name": "a", "kind": "conv", "out_channels": 2, "kernel": [3, 3], "predecessors": ["x"]}]}"#,
        )
        .unwrap();
        let p = partition_groups(&g, &couple_channels(&g)).unwrap();
        let r = load_stats(r#"{"criterion": "bn_gamma", "scores": {"a": [0.1, 0.3]}}"#, &g).unwrap();
        let t = group_importance(&r, &p).unwrap();
        assert_eq!(t.values(), &[0.2]);
    }

    #[test]
    fn classifier_scores_are_optional() {
        let g = parse_model(TOY).unwrap();
        let mut scores = IndexMap::new();
        scores.insert("a".to_string(), vec![1.0, 2.0]);
        scores.insert("b".to_string(), vec![1.0, 2.0, 3.0]);
        assert!(ImportanceReport::new(Criterion::FilterNorm, scores.clone(), &g).is_ok());
        scores.insert("fc".to_string(), vec![0.0; 10]);
        assert!(ImportanceReport::new(Criterion::FilterNorm, scores, &g).is_ok());
    }
}
