//! Token edit distance, word and field accuracy rates, and mask IoU.

use crate::corpus::{Dataset, FieldSchema};
use crate::extract::FieldPrediction;
use crate::grid::LabelMask;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no field has a non-empty ground truth")]
    NoEvaluableFields,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no prediction for document {0:?}")]
    MissingPrediction(String),
    #[error("cannot evaluate an empty document set")]
    EmptyDataset,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub insertions: usize,
    pub deletions: usize,
    pub substitutions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.insertions + self.deletions + self.substitutions
    }
}

/// Minimal token-level Levenshtein alignment of `pred` against `gt`.
///
/// Among minimal alignments the one with the fewest insertions plus
/// deletions wins, i.e. substitutions are preferred to insert/delete pairs.
/// Insertions are predicted tokens absent from the ground truth.
pub fn token_edit_distance<S: AsRef<str>, U: AsRef<str>>(gt: &[S], pred: &[U]) -> EditCounts {
    let (n, m) = (gt.len(), pred.len());
    // cost[i][j] = (total, ins + del) aligning gt[..i] with pred[..j]
    let mut cost = vec![vec![(0usize, 0usize); m + 1]; n + 1];
    for i in 0..=n {
        for j in 0..=m {
            cost[i][j] = if i == 0 || j == 0 {
                (i + j, i + j)
            } else {
                let sub = usize::from(gt[i - 1].as_ref() != pred[j - 1].as_ref());
                let (dt, di) = cost[i - 1][j - 1];
                let (ut, ui) = cost[i - 1][j];
                let (lt, li) = cost[i][j - 1];
                (dt + sub, di).min((ut + 1, ui + 1)).min((lt + 1, li + 1))
            };
        }
    }
    let mut counts = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i][j];
        if i > 0 && j > 0 {
            let sub = usize::from(gt[i - 1].as_ref() != pred[j - 1].as_ref());
            let (dt, di) = cost[i - 1][j - 1];
            if (dt + sub, di) == here {
                counts.substitutions += sub;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 {
            let (ut, ui) = cost[i - 1][j];
            if (ut + 1, ui + 1) == here {
                counts.deletions += 1;
                i -= 1;
                continue;
            }
        }
        counts.insertions += 1;
        j -= 1;
    }
    counts
}

/// Word accuracy rate per field and its mean over evaluated fields.
#[derive(Debug, Clone, PartialEq)]
pub struct WarResult {
    /// `None` for fields whose ground truth is empty.
    pub per_field: Vec<Option<f64>>,
    pub mean: f64,
    pub fields_evaluated: usize,
}

/// `1 - (ins + del + sub) / N` per field with `N` ground-truth tokens,
/// unclamped. Fields with empty ground truth are skipped.
pub fn war<S: AsRef<str>, U: AsRef<str>>(gt_fields: &[Vec<S>], pred_fields: &[Vec<U>]) -> Result<WarResult, MetricsError> {
    if gt_fields.len() != pred_fields.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} ground-truth fields vs {} predicted",
            gt_fields.len(),
            pred_fields.len()
        )));
    }
    let per_field: Vec<Option<f64>> = gt_fields
        .iter()
        .zip(pred_fields)
        .map(|(g, p)| {
            (!g.is_empty()).then(|| 1.0 - token_edit_distance(g, p).total() as f64 / g.len() as f64)
        })
        .collect();
    let scores: Vec<f64> = per_field.iter().flatten().copied().collect();
    if scores.is_empty() {
        return Err(MetricsError::NoEvaluableFields);
    }
    Ok(WarResult {
        mean: scores.iter().sum::<f64>() / scores.len() as f64,
        fields_evaluated: scores.len(),
        per_field,
    })
}

fn joined<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ")
}

/// Exact-match indicator per field.
pub fn field_matches<S: AsRef<str>, U: AsRef<str>>(gt_fields: &[Vec<S>], pred_fields: &[Vec<U>]) -> Vec<bool> {
    gt_fields
        .iter()
        .zip(pred_fields)
        .map(|(g, p)| joined(g) == joined(p))
        .collect()
}

/// Fraction of all fields whose joined strings match exactly.
pub fn far<S: AsRef<str>, U: AsRef<str>>(gt_fields: &[Vec<S>], pred_fields: &[Vec<U>]) -> f64 {
    if gt_fields.is_empty() {
        return 1.0;
    }
    let matches = field_matches(gt_fields, pred_fields).into_iter().filter(|&m| m).count();
    matches as f64 / gt_fields.len() as f64
}

/// Mean IoU over foreground classes present in either mask; 1.0 if none is.
pub fn iou_metric(pred: &LabelMask, gt: &LabelMask, schema: &FieldSchema) -> Result<f64, MetricsError> {
    if (pred.rows, pred.cols) != (gt.rows, gt.cols) {
        return Err(MetricsError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            pred.rows, pred.cols, gt.rows, gt.cols
        )));
    }
    let k = schema.k();
    let mut inter = vec![0usize; k + 1];
    let mut union = vec![0usize; k + 1];
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        if p == g {
            inter[p as usize] += 1;
            union[p as usize] += 1;
        } else {
            union[p as usize] += 1;
            union[g as usize] += 1;
        }
    }
    let ious: Vec<f64> = (1..=k)
        .filter(|&c| union[c] > 0)
        .map(|c| inter[c] as f64 / union[c] as f64)
        .collect();
    if ious.is_empty() {
        return Ok(1.0);
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScores {
    pub id: String,
    /// `None` when no field of the document has ground truth.
    pub war: Option<f64>,
    pub far: f64,
    pub field_war: Vec<Option<f64>>,
    pub field_match: Vec<bool>,
    pub fields_evaluated: usize,
}

pub fn score_document<S: AsRef<str>, U: AsRef<str>>(id: &str, gt_fields: &[Vec<S>], pred_fields: &[Vec<U>]) -> Result<DocScores, MetricsError> {
    let (war, field_war, fields_evaluated) = match war(gt_fields, pred_fields) {
        Ok(w) => (Some(w.mean), w.per_field, w.fields_evaluated),
        Err(MetricsError::NoEvaluableFields) => (None, vec![None; gt_fields.len()], 0),
        Err(e) => return Err(e),
    };
    Ok(DocScores {
        id: id.to_string(),
        war,
        far: far(gt_fields, pred_fields),
        field_war,
        field_match: field_matches(gt_fields, pred_fields),
        fields_evaluated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub war: f64,
    pub far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldAggregate {
    /// `None` when no document has ground truth for the field.
    pub war: Option<f64>,
    pub far: f64,
    pub evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset: Aggregate,
    pub per_field: BTreeMap<String, FieldAggregate>,
    pub per_doc: Vec<DocScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_iou: Option<f64>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Aggregates already-computed per-document scores.
pub fn build_report(schema: &FieldSchema, per_doc: Vec<DocScores>) -> Result<Report, MetricsError> {
    if per_doc.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let per_field = schema
        .fields
        .iter()
        .enumerate()
        .map(|(f, name)| {
            let wars: Vec<f64> = per_doc.iter().filter_map(|d| d.field_war.get(f).copied().flatten()).collect();
            let agg = FieldAggregate {
                evaluated: wars.len(),
                war: mean(wars),
                far: mean(per_doc.iter().map(|d| if d.field_match.get(f) == Some(&true) { 1.0 } else { 0.0 })).unwrap_or(0.0),
            };
            (name.clone(), agg)
        })
        .collect();
    let dataset = Aggregate {
        war: mean(per_doc.iter().filter_map(|d| d.war)).ok_or(MetricsError::NoEvaluableFields)?,
        far: mean(per_doc.iter().map(|d| d.far)).unwrap_or(0.0),
    };
    Ok(Report {
        dataset,
        per_field,
        per_doc,
        mean_iou: None,
    })
}

/// Scores every document against the prediction with the same id.
pub fn evaluate_dataset(dataset: &Dataset, predictions: &[FieldPrediction]) -> Result<Report, MetricsError> {
    let by_id: HashMap<&str, &FieldPrediction> = predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut per_doc = Vec::with_capacity(dataset.len());
    for ldoc in &dataset.docs {
        let id = ldoc.document.id.as_str();
        let pred = by_id
            .get(id)
            .ok_or_else(|| MetricsError::MissingPrediction(id.to_string()))?;
        per_doc.push(score_document(id, &ldoc.gt_field_texts(&dataset.schema), &pred.field_tokens())?);
    }
    build_report(&dataset.schema, per_doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ec(i: usize, d: usize, s: usize) -> EditCounts {
        EditCounts {
            insertions: i,
            deletions: d,
            substitutions: s,
        }
    }

    fn v(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn edit_fixtures() {
        let empty: [&str; 0] = [];
        assert_eq!(token_edit_distance(&["a"], &["a"]), ec(0, 0, 0));
        assert_eq!(token_edit_distance(&empty, &["x"]), ec(1, 0, 0));
        assert_eq!(token_edit_distance(&["total", "due", "100"], &["total", "100"]), ec(0, 1, 0));
        assert_eq!(token_edit_distance(&["a", "b"], &["x", "y", "z"]), ec(1, 0, 2));
        assert_eq!(token_edit_distance(&["a", "b"], &["b", "a"]), ec(0, 0, 2));
    }

    #[test]
    fn war_fixtures() {
        let gt = vec![v(&["total", "due", "100"])];
        let w = war(&gt, &[v(&["total", "100"])]).unwrap();
        assert!((w.mean - 2.0 / 3.0).abs() < 1e-12);
        let w = war(&[v(&["a", "b"])], &[v(&["x", "y", "z"])]).unwrap();
        assert_eq!(w.mean, -0.5);
        let w = war(&[v(&["a"]), v(&[])], &[v(&["a"]), v(&["junk"])]).unwrap();
        assert_eq!((w.mean, w.fields_evaluated), (1.0, 1));
        assert_eq!(war(&[v(&[])], &[v(&["a"])]), Err(MetricsError::NoEvaluableFields));
    }

    #[test]
    fn far_fixtures() {
        let gt = vec![v(&["a"]), v(&["b", "c"]), v(&["d"]), v(&[])];
        let pred = vec![v(&["a"]), v(&["b"]), v(&["e"]), v(&[])];
        assert_eq!(far(&gt, &pred), 0.5);
        assert_eq!(far(&gt, &gt), 1.0);
        assert_eq!(far(&[v(&[])], &[v(&["x"])]), 0.0);
    }

    fn mask(rows: usize, cols: usize, data: &[u16]) -> LabelMask {
        LabelMask {
            rows,
            cols,
            data: data.to_vec(),
        }
    }

    #[test]
    fn iou_fixtures() {
        let schema = FieldSchema::new(["a", "b"]).unwrap();
        let gt = mask(2, 4, &[1, 1, 1, 1, 0, 0, 0, 0]);
        assert_eq!(iou_metric(&gt, &gt, &schema).unwrap(), 1.0);
        let pred = mask(2, 4, &[0, 0, 1, 1, 1, 1, 0, 0]);
        assert!((iou_metric(&pred, &gt, &schema).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou_metric(&LabelMask::zeros(2, 4), &gt, &schema).unwrap(), 0.0);
        assert_eq!(iou_metric(&LabelMask::zeros(2, 4), &LabelMask::zeros(2, 4), &schema).unwrap(), 1.0);
        assert!(iou_metric(&LabelMask::zeros(4, 2), &gt, &schema).is_err());
    }

    #[test]
    fn report_means_and_json() {
        let schema = FieldSchema::new(["a", "b"]).unwrap();
        let d1 = score_document("d1", &[v(&["x"]), v(&["y"])], &[v(&["x"]), v(&["y"])]).unwrap();
        let d2 = score_document("d2", &[v(&["x"]), v(&["y"])], &[v(&["x"]), v(&["z"])]).unwrap();
        let report = build_report(&schema, vec![d1, d2]).unwrap();
        assert_eq!(report.dataset.far, 0.75);
        assert_eq!(report.dataset.war, 0.75);
        assert_eq!(report.per_field["b"].far, 0.5);
        let text = report.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["per_doc"][1]["id"], "d2");
        assert_eq!(v["dataset"]["far"], 0.75);
        assert_eq!(Report::from_json(&text).unwrap(), report);
        assert!(matches!(build_report(&schema, vec![]), Err(MetricsError::EmptyDataset)));
    }
}
