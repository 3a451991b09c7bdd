//! Decoding a probability map back into field token sequences.

use crate::corpus::{Document, FieldSchema, TokenBox};
use crate::embed::normalize_token;
use crate::grid::{scale_box, GridSpec, LabelMask};
use crate::net::{ProbMap, Scalar};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Default minimum fraction of a token's cells that must carry a class.
pub const DEFAULT_THETA: f64 = 0.5;

/// Per-cell argmax; ties go to the lower class index.
pub fn argmax_mask<T: Scalar>(probs: &ProbMap<T>) -> LabelMask {
    let mut mask = LabelMask::zeros(probs.rows, probs.cols);
    for (i, cell) in probs.data.chunks(probs.classes).enumerate() {
        let mut best = 0;
        for k in 1..cell.len() {
            if cell[k] > cell[best] {
                best = k;
            }
        }
        mask.data[i] = best as u16;
    }
    mask
}

/// Class of a token from the share of its grid cells carrying each
/// foreground class. Returns 0 unless the best share reaches `theta`.
pub fn assign_token_class(
    token: &TokenBox,
    image_width: u32,
    image_height: u32,
    mask: &LabelMask,
    spec: &GridSpec,
    theta: f64,
) -> u16 {
    let cb = scale_box(token.rect(), image_width, image_height, spec);
    let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
    let mut total = 0usize;
    for (r, c) in cb.cells() {
        total += 1;
        let v = mask.get(r, c);
        if v > 0 {
            *counts.entry(v).or_default() += 1;
        }
    }
    if total == 0 {
        return 0;
    }
    // BTreeMap iterates ascending, so strict > keeps the lower class on ties
    let mut best: Option<(u16, usize)> = None;
    for (&class, &n) in &counts {
        if best.is_none_or(|(_, bn)| n > bn) {
            best = Some((class, n));
        }
    }
    match best {
        Some((class, n)) if n as f64 / total as f64 >= theta => class,
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FieldValue {
    pub tokens: Vec<usize>,
    pub text: String,
}

/// Extracted fields of one document, indexed by `class - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldPrediction {
    pub id: String,
    pub fields: Vec<FieldValue>,
}

#[derive(Serialize, Deserialize)]
struct PredictionJson {
    id: String,
    fields: BTreeMap<String, FieldValue>,
}

#[derive(Debug, thiserror::Error)]
pub enum PredictionFormatError {
    #[error("malformed prediction json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("prediction names unknown field {0:?}")]
    UnknownField(String),
}

impl FieldPrediction {
    pub fn empty(id: &str, schema: &FieldSchema) -> Self {
        FieldPrediction {
            id: id.to_string(),
            fields: vec![FieldValue::default(); schema.k()],
        }
    }

    /// Normalized token strings of every field.
    pub fn field_tokens(&self) -> Vec<Vec<String>> {
        self.fields
            .iter()
            .map(|f| f.text.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    pub fn to_json(&self, schema: &FieldSchema) -> String {
        let fields = schema
            .fields
            .iter()
            .cloned()
            .zip(self.fields.iter().cloned())
            .collect();
        let j = PredictionJson {
            id: self.id.clone(),
            fields,
        };
        serde_json::to_string_pretty(&j).expect("prediction serializes")
    }

    /// Parses the per-document JSON; fields missing from the file are empty.
    pub fn from_json(text: &str, schema: &FieldSchema) -> Result<Self, PredictionFormatError> {
        let j: PredictionJson = serde_json::from_str(text)?;
        let mut pred = FieldPrediction::empty(&j.id, schema);
        for (name, value) in j.fields {
            let class = schema
                .class_of(&name)
                .ok_or_else(|| PredictionFormatError::UnknownField(name.clone()))?;
            pred.fields[class - 1] = value;
        }
        Ok(pred)
    }
}

/// Token classes for a whole document from a label mask.
pub fn assign_tokens(doc: &Document, mask: &LabelMask, spec: &GridSpec, theta: f64) -> Vec<u16> {
    doc.tokens
        .iter()
        .map(|t| assign_token_class(t, doc.width, doc.height, mask, spec, theta))
        .collect()
}

/// Fields from an already-decided mask.
pub fn decode_mask(doc: &Document, mask: &LabelMask, spec: &GridSpec, schema: &FieldSchema) -> FieldPrediction {
    let classes = assign_tokens(doc, mask, spec, DEFAULT_THETA);
    let mut pred = FieldPrediction::empty(&doc.id, schema);
    // tokens are visited in ascending OCR index
    for (i, &c) in classes.iter().enumerate() {
        if c == 0 || c as usize > schema.k() {
            continue;
        }
        let field = &mut pred.fields[c as usize - 1];
        field.tokens.push(i);
        let word = normalize_token(&doc.tokens[i].text);
        if !word.is_empty() {
            if !field.text.is_empty() {
                field.text.push(' ');
            }
            field.text.push_str(&word);
        }
    }
    pred
}

pub fn decode_fields<T: Scalar>(
    doc: &Document,
    probs: &ProbMap<T>,
    spec: &GridSpec,
    schema: &FieldSchema,
) -> FieldPrediction {
    decode_mask(doc, &argmax_mask(probs), spec, schema)
}
