//! Document data model, file ingestion, synthetic generation and k-fold splits.

pub mod ppm;
mod split;
mod synth;

pub use split::{split_kfold, FoldSplit};
pub use synth::{glyph_rows, synth_generate, SynthConfig, SynthVariant};

use crate::embed::normalize_token;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {detail}")]
    MalformedFile { path: String, detail: String },
    #[error("box out of bounds: {0}")]
    BoxOutOfBounds(String),
    #[error("annotation names unknown field {0:?}")]
    UnknownField(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid document: {0}")]
    InvalidDocument(String),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("dataset of {len} documents is too small for a {k}-fold split (need at least {})", 2 * k)]
    DatasetTooSmall { len: usize, k: usize },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Axis-aligned rectangle in source-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.w >= 1
            && self.h >= 1
            && self.x as u64 + self.w as u64 <= width as u64
            && self.y as u64 + self.h as u64 <= height as u64
    }

    fn intersect(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x0 < x1 && y0 < y1).then(|| Rect::new(x0, y0, x1 - x0, y1 - y0))
    }
}

/// One OCR token: text plus its bounding box, in reading order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBox {
    pub index: usize,
    pub text: String,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl TokenBox {
    pub fn rect(&self) -> Rect {
        Rect::new(self.x, self.y, self.w, self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB triples.
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            pixels.extend_from_slice(&rgb);
        }
        RgbImage {
            width,
            height,
            pixels,
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn fill_rect(&mut self, r: Rect, rgb: [u8; 3]) {
        for y in r.y..r.bottom().min(self.height) {
            for x in r.x..r.right().min(self.width) {
                self.set_pixel(x, y, rgb);
            }
        }
    }

    fn check(&self) -> Result<(), String> {
        let expected = self.width as usize * self.height as usize * 3;
        if self.pixels.len() != expected {
            return Err(format!(
                "pixel buffer holds {} bytes, expected {expected}",
                self.pixels.len()
            ));
        }
        Ok(())
    }
}

/// A page: OCR tokens over an optional page image of the stated size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub image: Option<RgbImage>,
    pub tokens: Vec<TokenBox>,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        width: u32,
        height: u32,
        image: Option<RgbImage>,
        tokens: Vec<TokenBox>,
    ) -> Result<Self, CorpusError> {
        let doc = Document {
            id: id.into(),
            width,
            height,
            image,
            tokens,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.width == 0 || self.height == 0 {
            return Err(CorpusError::InvalidDocument(format!(
                "{}: zero page dimension",
                self.id
            )));
        }
        if let Some(img) = &self.image {
            img.check()
                .map_err(|e| CorpusError::InvalidDocument(format!("{}: {e}", self.id)))?;
            if img.width != self.width || img.height != self.height {
                return Err(CorpusError::InvalidDocument(format!(
                    "{}: image is {}x{} but page is {}x{}",
                    self.id, img.width, img.height, self.width, self.height
                )));
            }
        }
        for (i, t) in self.tokens.iter().enumerate() {
            if t.index != i {
                return Err(CorpusError::InvalidDocument(format!(
                    "{}: token at position {i} has index {}",
                    self.id, t.index
                )));
            }
            if t.text.is_empty() {
                return Err(CorpusError::InvalidDocument(format!(
                    "{}: token {i} has empty text",
                    self.id
                )));
            }
            if !t.rect().fits_in(self.width, self.height) {
                return Err(CorpusError::BoxOutOfBounds(format!(
                    "{}: token {i} ({:?}) at x={},y={},w={},h={} exceeds {}x{}",
                    self.id, t.text, t.x, t.y, t.w, t.h, self.width, self.height
                )));
            }
        }
        Ok(())
    }
}

/// Ordered field names. Field `i` has class `i + 1`; class 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSchema {
    pub fields: Vec<String>,
}

impl FieldSchema {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, CorpusError> {
        let schema = FieldSchema {
            fields: names.into_iter().map(Into::into).collect(),
        };
        schema.validate()?;
        Ok(schema)
    }

    /// receiver, supplier, invoice_info, total.
    pub fn invoice_default() -> Self {
        FieldSchema::new(["receiver", "supplier", "invoice_info", "total"]).unwrap()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.fields.is_empty() {
            return Err(CorpusError::InvalidSchema("no fields".into()));
        }
        for (i, name) in self.fields.iter().enumerate() {
            if name.is_empty() {
                return Err(CorpusError::InvalidSchema(format!("field {i} has empty name")));
            }
            if self.fields[..i].contains(name) {
                return Err(CorpusError::InvalidSchema(format!("duplicate field {name:?}")));
            }
        }
        if self.fields.len() > u16::MAX as usize - 1 {
            return Err(CorpusError::InvalidSchema("too many fields".into()));
        }
        Ok(())
    }

    /// Number of fields K.
    pub fn k(&self) -> usize {
        self.fields.len()
    }

    pub fn num_classes(&self) -> usize {
        self.fields.len() + 1
    }

    pub fn class_of(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f == name).map(|i| i + 1)
    }

    /// Field name for a foreground class.
    pub fn field_name(&self, class: usize) -> Option<&str> {
        class
            .checked_sub(1)
            .and_then(|i| self.fields.get(i))
            .map(String::as_str)
    }
}

/// Per-field ground-truth rectangles, aligned with the schema order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub regions: Vec<Vec<Rect>>,
}

impl Annotation {
    pub fn empty(schema: &FieldSchema) -> Self {
        Annotation {
            regions: vec![Vec::new(); schema.k()],
        }
    }

    pub fn from_named(
        named: &BTreeMap<String, Vec<Rect>>,
        schema: &FieldSchema,
    ) -> Result<Self, CorpusError> {
        let mut ann = Annotation::empty(schema);
        for (name, rects) in named {
            let class = schema
                .class_of(name)
                .ok_or_else(|| CorpusError::UnknownField(name.clone()))?;
            ann.regions[class - 1] = rects.clone();
        }
        Ok(ann)
    }

    pub fn to_named(&self, schema: &FieldSchema) -> BTreeMap<String, Vec<Rect>> {
        schema
            .fields
            .iter()
            .cloned()
            .zip(self.regions.iter().cloned())
            .collect()
    }

    pub fn validate(&self, schema: &FieldSchema, width: u32, height: u32) -> Result<(), CorpusError> {
        if self.regions.len() != schema.k() {
            return Err(CorpusError::InvalidDocument(format!(
                "annotation has {} region lists for {} fields",
                self.regions.len(),
                schema.k()
            )));
        }
        for (i, rects) in self.regions.iter().enumerate() {
            for r in rects {
                if !r.fits_in(width, height) {
                    return Err(CorpusError::BoxOutOfBounds(format!(
                        "region of field {:?} at {r:?} exceeds {width}x{height}",
                        schema.fields[i]
                    )));
                }
            }
        }
        Ok(())
    }

    /// True when at least one field has a region.
    pub fn has_any_field(&self) -> bool {
        self.regions.iter().any(|r| !r.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDocument {
    pub document: Document,
    pub annotation: Annotation,
    /// Ground-truth class of each token, indexed by token index.
    pub gt_assignment: Vec<u16>,
}

impl LabeledDocument {
    pub fn new(
        document: Document,
        annotation: Annotation,
        schema: &FieldSchema,
    ) -> Result<Self, CorpusError> {
        document.validate()?;
        annotation.validate(schema, document.width, document.height)?;
        let gt_assignment = derive_ground_truth(&document, &annotation, schema);
        Ok(LabeledDocument {
            document,
            annotation,
            gt_assignment,
        })
    }

    /// Ground-truth token indices of every field, in reading order.
    pub fn gt_field_tokens(&self, schema: &FieldSchema) -> Vec<Vec<usize>> {
        let mut fields = vec![Vec::new(); schema.k()];
        for (i, &c) in self.gt_assignment.iter().enumerate() {
            if c > 0 {
                fields[c as usize - 1].push(i);
            }
        }
        fields
    }

    /// Ground-truth normalized token strings of every field.
    pub fn gt_field_texts(&self, schema: &FieldSchema) -> Vec<Vec<String>> {
        self.gt_field_tokens(schema)
            .into_iter()
            .map(|idx| {
                idx.into_iter()
                    .map(|i| normalize_token(&self.document.tokens[i].text))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub schema: FieldSchema,
    pub docs: Vec<LabeledDocument>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            docs: indices.iter().map(|&i| self.docs[i].clone()).collect(),
        }
    }
}

/// Area of `target` covered by the union of `rects`.
fn covered_area(target: &Rect, rects: &[Rect]) -> u64 {
    let clipped: Vec<Rect> = rects.iter().filter_map(|r| r.intersect(target)).collect();
    if clipped.is_empty() {
        return 0;
    }
    let mut xs: Vec<u32> = clipped.iter().flat_map(|r| [r.x, r.right()]).collect();
    let mut ys: Vec<u32> = clipped.iter().flat_map(|r| [r.y, r.bottom()]).collect();
    xs.sort_unstable();
    xs.dedup();
    ys.sort_unstable();
    ys.dedup();
    let mut area = 0u64;
    for xw in xs.windows(2) {
        for yw in ys.windows(2) {
            let covered = clipped
                .iter()
                .any(|r| r.x <= xw[0] && xw[1] <= r.right() && r.y <= yw[0] && yw[1] <= r.bottom());
            if covered {
                area += (xw[1] - xw[0]) as u64 * (yw[1] - yw[0]) as u64;
            }
        }
    }
    area
}

/// Assigns each token the field whose regions cover at least half of its box.
///
/// When several fields reach half coverage the largest overlap wins, ties going
/// to the lower class index. Tokens below the threshold everywhere are class 0.
pub fn derive_ground_truth(
    document: &Document,
    annotation: &Annotation,
    schema: &FieldSchema,
) -> Vec<u16> {
    document
        .tokens
        .iter()
        .map(|t| {
            let rect = t.rect();
            let area = rect.area();
            let mut best: Option<(u64, usize)> = None;
            for class in 1..=schema.k() {
                let rects = annotation.regions.get(class - 1).map_or(&[][..], |v| v);
                let cov = covered_area(&rect, rects);
                if 2 * cov >= area && cov > 0 && best.is_none_or(|(b, _)| cov > b) {
                    best = Some((cov, class));
                }
            }
            best.map_or(0, |(_, c)| c as u16)
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct OcrFile {
    pub width: i64,
    pub height: i64,
    pub tokens: Vec<OcrToken>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct OcrToken {
    pub text: String,
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct AnnotationFile {
    pub fields: BTreeMap<String, Vec<Rect>>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CorpusError::MalformedFile {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

fn parse_ocr(path: &Path, ocr: OcrFile) -> Result<(u32, u32, Vec<TokenBox>), CorpusError> {
    let malformed = |detail: String| CorpusError::MalformedFile {
        path: path.display().to_string(),
        detail,
    };
    if ocr.width < 1 || ocr.height < 1 || ocr.width > u32::MAX as i64 || ocr.height > u32::MAX as i64 {
        return Err(malformed(format!(
            "invalid page size {}x{}",
            ocr.width, ocr.height
        )));
    }
    let (width, height) = (ocr.width as u32, ocr.height as u32);
    let mut tokens = Vec::with_capacity(ocr.tokens.len());
    for (i, t) in ocr.tokens.into_iter().enumerate() {
        if normalize_token(&t.text).is_empty() {
            return Err(malformed(format!("tokens[{i}].text is empty after normalization")));
        }
        if t.w < 1 || t.h < 1 {
            return Err(malformed(format!("tokens[{i}] has non-positive size {}x{}", t.w, t.h)));
        }
        if t.x < 0 || t.y < 0 || t.x + t.w > width as i64 || t.y + t.h > height as i64 {
            return Err(CorpusError::BoxOutOfBounds(format!(
                "{}: tokens[{i}] ({:?}) at x={},y={},w={},h={} exceeds {width}x{height}",
                path.display(),
                t.text,
                t.x,
                t.y,
                t.w,
                t.h
            )));
        }
        tokens.push(TokenBox {
            index: i,
            text: t.text,
            x: t.x as u32,
            y: t.y as u32,
            w: t.w as u32,
            h: t.h as u32,
        });
    }
    Ok((width, height, tokens))
}

/// Loads one page from an OCR JSON file, a P6 image and an optional annotation.
///
/// Without an annotation every token is background.
pub fn load_document(
    id: &str,
    ocr_path: &Path,
    image_path: Option<&Path>,
    annotation_path: Option<&Path>,
    schema: &FieldSchema,
) -> Result<LabeledDocument, CorpusError> {
    let ocr: OcrFile = read_json(ocr_path)?;
    let (width, height, tokens) = parse_ocr(ocr_path, ocr)?;
    let image = match image_path {
        Some(p) => {
            let img = ppm::read(p)?;
            if img.width != width || img.height != height {
                return Err(CorpusError::MalformedFile {
                    path: p.display().to_string(),
                    detail: format!(
                        "image is {}x{} but OCR page is {width}x{height}",
                        img.width, img.height
                    ),
                });
            }
            Some(img)
        }
        None => None,
    };
    let document = Document::new(id, width, height, image, tokens)?;
    let annotation = match annotation_path {
        Some(p) => {
            let file: AnnotationFile = read_json(p)?;
            Annotation::from_named(&file.fields, schema)?
        }
        None => Annotation::empty(schema),
    };
    LabeledDocument::new(document, annotation, schema)
}

/// One document entry of a dataset manifest; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub ocr: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: FieldSchema,
    pub documents: Vec<ManifestEntry>,
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, CorpusError> {
    let manifest: DatasetManifest = read_json(manifest_path)?;
    manifest.schema.validate()?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let docs = manifest
        .documents
        .iter()
        .map(|e| {
            let image = e.image.as_ref().map(|p| base.join(p));
            let ann = e.annotation.as_ref().map(|p| base.join(p));
            load_document(
                &e.id,
                &base.join(&e.ocr),
                image.as_deref(),
                ann.as_deref(),
                &manifest.schema,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        schema: manifest.schema,
        docs,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CorpusError> {
    std::fs::write(path, bytes).map_err(|e| CorpusError::io(path, e))
}

/// Writes `<id>.ocr.json`, `<id>.ppm` and `<id>.ann.json` per document plus
/// `manifest.json`; returns the manifest path.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf, CorpusError> {
    std::fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.docs.len());
    for ld in &dataset.docs {
        let doc = &ld.document;
        let ocr = OcrFile {
            width: doc.width as i64,
            height: doc.height as i64,
            tokens: doc
                .tokens
                .iter()
                .map(|t| OcrToken {
                    text: t.text.clone(),
                    x: t.x as i64,
                    y: t.y as i64,
                    w: t.w as i64,
                    h: t.h as i64,
                })
                .collect(),
        };
        let ocr_name = format!("{}.ocr.json", doc.id);
        write_file(&dir.join(&ocr_name), &serde_json::to_vec(&ocr).expect("ocr json"))?;
        let image = match &doc.image {
            Some(img) => {
                let name = format!("{}.ppm", doc.id);
                ppm::write(&dir.join(&name), img)?;
                Some(name)
            }
            None => None,
        };
        let ann_name = format!("{}.ann.json", doc.id);
        let ann = AnnotationFile {
            fields: ld.annotation.to_named(&dataset.schema),
        };
        write_file(&dir.join(&ann_name), &serde_json::to_vec(&ann).expect("annotation json"))?;
        entries.push(ManifestEntry {
            id: doc.id.clone(),
            ocr: ocr_name,
            image,
            annotation: Some(ann_name),
        });
    }
    let manifest = DatasetManifest {
        schema: dataset.schema.clone(),
        documents: entries,
    };
    let path = dir.join("manifest.json");
    write_file(
        &path,
        &serde_json::to_vec_pretty(&manifest).expect("manifest json"),
    )?;
    Ok(path)
}
