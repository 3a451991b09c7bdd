//! Rasterization of documents into grid encodings and label masks.
//!
//! Four encodings are supported, all `(H, W, C)` row-major `f32`:
//! layout (3 channels, 1 under any token box), WordGrid (`d` channels of token
//! embedding), the padded visual WordGrid (`d + 3`: embedding under tokens,
//! image RGB elsewhere, never both) and the two-input variant (WordGrid plus
//! the full resized image).

use crate::corpus::{Document, LabeledDocument, Rect, RgbImage};
use crate::embed::Embedder;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("document {0} has no image")]
    MissingImage(String),
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("embedder dimension {embedder} does not match grid dimension {grid}")]
    DimMismatch { embedder: usize, grid: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("tensor shape overflow or empty dimension: {0}")]
    ShapeOverflow(String),
    #[error("unsupported tensor file: {0}")]
    Unsupported(String),
}

/// Grid rows, columns and embedding dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, dim: usize) -> Result<Self, GridError> {
        let spec = GridSpec { rows, cols, dim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.rows < 8 || self.cols < 8 {
            return Err(GridError::InvalidSpec(format!(
                "grid must be at least 8x8, got {}x{}",
                self.rows, self.cols
            )));
        }
        if self.dim == 0 {
            return Err(GridError::InvalidSpec("embedding dimension must be positive".into()));
        }
        Ok(())
    }

    /// Checks that both extents survive `depth` halvings.
    pub fn check_depth(&self, depth: usize) -> Result<(), GridError> {
        let m = 1usize << depth;
        if !self.rows.is_multiple_of(m) || !self.cols.is_multiple_of(m) {
            return Err(GridError::InvalidSpec(format!(
                "grid {}x{} is not divisible by 2^{depth}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }
}

/// `(H, W, C)` tensor of `f32`, row-major with channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTensor {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl GridTensor {
    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        GridTensor {
            rows,
            cols,
            channels,
            data: vec![0.0; rows * cols * channels],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.channels)
    }

    pub fn cell(&self, r: usize, c: usize) -> &[f32] {
        let i = (r * self.cols + c) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn cell_mut(&mut self, r: usize, c: usize) -> &mut [f32] {
        let i = (r * self.cols + c) * self.channels;
        &mut self.data[i..i + self.channels]
    }
}

/// `(H, W)` map of class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<u16>,
}

impl LabelMask {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        LabelMask {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> u16 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: u16) {
        self.data[r * self.cols + c] = v;
    }

    pub fn to_tensor(&self) -> GridTensor {
        GridTensor {
            rows: self.rows,
            cols: self.cols,
            channels: 1,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_tensor(t: &GridTensor) -> Option<Self> {
        if t.channels != 1 {
            return None;
        }
        let data = t
            .data
            .iter()
            .map(|&v| (v >= 0.0 && v.fract() == 0.0 && v <= u16::MAX as f32).then_some(v as u16))
            .collect::<Option<Vec<_>>>()?;
        Some(LabelMask {
            rows: t.rows,
            cols: t.cols,
            data,
        })
    }
}

/// Half-open grid-cell ranges covered by a scaled box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellBox {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

impl CellBox {
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.row_start..self.row_end)
            .flat_map(move |r| (self.col_start..self.col_end).map(move |c| (r, c)))
    }

    pub fn area(&self) -> usize {
        (self.row_end - self.row_start) * (self.col_end - self.col_start)
    }

    pub fn intersects(&self, other: &CellBox) -> bool {
        self.row_start < other.row_end
            && other.row_start < self.row_end
            && self.col_start < other.col_end
            && other.col_start < self.col_end
    }
}

fn scale_range(start: u32, len: u32, extent: u32, cells: usize) -> (usize, usize) {
    let cells = cells as u64;
    let extent = extent as u64;
    let lo = (start as u64 * cells / extent) as usize;
    let hi = ((start as u64 + len as u64) * cells).div_ceil(extent) as usize;
    let hi = hi.max(lo + 1).min(cells as usize);
    (lo, hi)
}

/// Maps a source-pixel rectangle to the grid cells it touches (never empty).
pub fn scale_box(rect: Rect, image_width: u32, image_height: u32, spec: &GridSpec) -> CellBox {
    let (col_start, col_end) = scale_range(rect.x, rect.w, image_width, spec.cols);
    let (row_start, row_end) = scale_range(rect.y, rect.h, image_height, spec.rows);
    CellBox {
        row_start,
        row_end,
        col_start,
        col_end,
    }
}

pub fn token_cells(doc: &Document, spec: &GridSpec) -> Vec<CellBox> {
    doc.tokens
        .iter()
        .map(|t| scale_box(t.rect(), doc.width, doc.height, spec))
        .collect()
}

pub fn rasterize_layout(doc: &Document, spec: &GridSpec) -> GridTensor {
    let mut out = GridTensor::zeros(spec.rows, spec.cols, 3);
    for cb in token_cells(doc, spec) {
        for (r, c) in cb.cells() {
            out.cell_mut(r, c).fill(1.0);
        }
    }
    out
}

fn check_dim(spec: &GridSpec, embedder: &Embedder) -> Result<(), GridError> {
    if embedder.dim() != spec.dim {
        return Err(GridError::DimMismatch {
            embedder: embedder.dim(),
            grid: spec.dim,
        });
    }
    Ok(())
}

/// Writes each token's embedding into the first `dim` channels of its cells,
/// in reading order so later tokens overwrite earlier ones.
fn paint_embeddings(doc: &Document, spec: &GridSpec, embedder: &Embedder, out: &mut GridTensor) {
    for (t, cb) in doc.tokens.iter().zip(token_cells(doc, spec)) {
        let e = embedder.embed_token(&t.text);
        for (r, c) in cb.cells() {
            out.cell_mut(r, c)[..spec.dim].copy_from_slice(&e);
        }
    }
}

pub fn rasterize_wordgrid(
    doc: &Document,
    spec: &GridSpec,
    embedder: &Embedder,
) -> Result<GridTensor, GridError> {
    check_dim(spec, embedder)?;
    let mut out = GridTensor::zeros(spec.rows, spec.cols, spec.dim);
    paint_embeddings(doc, spec, embedder, &mut out);
    Ok(out)
}

/// Nearest-neighbour resize with centre sampling, scaled to [0, 1].
pub fn resize_image(image: &RgbImage, rows: usize, cols: usize) -> GridTensor {
    let mut out = GridTensor::zeros(rows, cols, 3);
    let (h, w) = (image.height as usize, image.width as usize);
    for r in 0..rows {
        let sy = (2 * r + 1) * h / (2 * rows);
        for c in 0..cols {
            let sx = (2 * c + 1) * w / (2 * cols);
            let p = image.pixel(sx as u32, sy as u32);
            let cell = out.cell_mut(r, c);
            for k in 0..3 {
                cell[k] = p[k] as f32 / 255.0;
            }
        }
    }
    out
}

fn require_image(doc: &Document) -> Result<&RgbImage, GridError> {
    doc.image
        .as_ref()
        .ok_or_else(|| GridError::MissingImage(doc.id.clone()))
}

pub fn rasterize_vwg_pad(
    doc: &Document,
    spec: &GridSpec,
    embedder: &Embedder,
) -> Result<GridTensor, GridError> {
    check_dim(spec, embedder)?;
    let image = resize_image(require_image(doc)?, spec.rows, spec.cols);
    let d = spec.dim;
    let mut out = GridTensor::zeros(spec.rows, spec.cols, d + 3);
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            out.cell_mut(r, c)[d..].copy_from_slice(image.cell(r, c));
        }
    }
    let mut covered = vec![false; spec.rows * spec.cols];
    for cb in token_cells(doc, spec) {
        for (r, c) in cb.cells() {
            covered[r * spec.cols + c] = true;
        }
    }
    for (i, &cov) in covered.iter().enumerate() {
        if cov {
            let base = i * (d + 3) + d;
            out.data[base..base + 3].fill(0.0);
        }
    }
    paint_embeddings(doc, spec, embedder, &mut out);
    Ok(out)
}

pub fn make_two_encoder_inputs(
    doc: &Document,
    spec: &GridSpec,
    embedder: &Embedder,
) -> Result<(GridTensor, GridTensor), GridError> {
    let image = resize_image(require_image(doc)?, spec.rows, spec.cols);
    Ok((rasterize_wordgrid(doc, spec, embedder)?, image))
}

/// Paints each token's ground-truth class over its cells, later tokens winning.
pub fn rasterize_target_mask(ldoc: &LabeledDocument, spec: &GridSpec) -> LabelMask {
    let mut mask = LabelMask::zeros(spec.rows, spec.cols);
    for (cb, &class) in token_cells(&ldoc.document, spec)
        .iter()
        .zip(&ldoc.gt_assignment)
    {
        for (r, c) in cb.cells() {
            mask.set(r, c, class);
        }
    }
    mask
}

/// The four document encodings compared by the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    Layout,
    #[serde(rename = "wordgrid")]
    WordGrid,
    VwgPad,
    #[serde(rename = "vwg-2enc")]
    Vwg2Enc,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 4] = [
        EncoderKind::Layout,
        EncoderKind::WordGrid,
        EncoderKind::VwgPad,
        EncoderKind::Vwg2Enc,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EncoderKind::Layout => "layout",
            EncoderKind::WordGrid => "wordgrid",
            EncoderKind::VwgPad => "vwg-pad",
            EncoderKind::Vwg2Enc => "vwg-2enc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        EncoderKind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Channels of the main input for embedding dimension `dim`.
    pub fn main_channels(&self, dim: usize) -> usize {
        match self {
            EncoderKind::Layout => 3,
            EncoderKind::WordGrid | EncoderKind::Vwg2Enc => dim,
            EncoderKind::VwgPad => dim + 3,
        }
    }

    pub fn is_dual(&self) -> bool {
        matches!(self, EncoderKind::Vwg2Enc)
    }

    pub fn needs_embedder(&self) -> bool {
        !matches!(self, EncoderKind::Layout)
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Encoded network input: the main grid and, for two-encoder models, the image.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInput {
    pub main: GridTensor,
    pub aux: Option<GridTensor>,
}

pub fn encode_document(
    kind: EncoderKind,
    doc: &Document,
    spec: &GridSpec,
    embedder: &Embedder,
) -> Result<EncodedInput, GridError> {
    Ok(match kind {
        EncoderKind::Layout => EncodedInput {
            main: rasterize_layout(doc, spec),
            aux: None,
        },
        EncoderKind::WordGrid => EncodedInput {
            main: rasterize_wordgrid(doc, spec, embedder)?,
            aux: None,
        },
        EncoderKind::VwgPad => EncodedInput {
            main: rasterize_vwg_pad(doc, spec, embedder)?,
            aux: None,
        },
        EncoderKind::Vwg2Enc => {
            let (main, aux) = make_two_encoder_inputs(doc, spec, embedder)?;
            EncodedInput {
                main,
                aux: Some(aux),
            }
        }
    })
}

/// True when some grid cell is covered by tokens of two different classes.
pub fn has_class_conflict(ldoc: &LabeledDocument, spec: &GridSpec) -> bool {
    let mut owner: Vec<Option<u16>> = vec![None; spec.rows * spec.cols];
    for (cb, &class) in token_cells(&ldoc.document, spec)
        .iter()
        .zip(&ldoc.gt_assignment)
    {
        for (r, c) in cb.cells() {
            let slot = &mut owner[r * spec.cols + c];
            match slot {
                Some(prev) if *prev != class => return true,
                _ => *slot = Some(class),
            }
        }
    }
    false
}

pub const TENSOR_MAGIC: &[u8; 4] = b"VWGT";

/// Serializes an arbitrary-rank f32 tensor in the VWGT layout.
pub fn encode_tensor(dims: &[usize], data: &[f32]) -> Result<Vec<u8>, GridError> {
    if dims.is_empty() || dims.len() > u8::MAX as usize {
        return Err(GridError::ShapeOverflow(format!("rank {}", dims.len())));
    }
    let mut count = 1usize;
    for &d in dims {
        if d == 0 || d > u32::MAX as usize {
            return Err(GridError::ShapeOverflow(format!("dimension {d} in {dims:?}")));
        }
        count = count
            .checked_mul(d)
            .ok_or_else(|| GridError::ShapeOverflow(format!("{dims:?}")))?;
    }
    if count != data.len() {
        return Err(GridError::ShapeOverflow(format!(
            "shape {dims:?} holds {count} values but buffer has {}",
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(6 + 4 * dims.len() + 4 * data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(0);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(mut reader: impl Read) -> Result<(Vec<usize>, Vec<f32>), GridError> {
    let io = |source| GridError::Io {
        path: "<stream>".into(),
        source,
    };
    let mut head = [0u8; 6];
    reader.read_exact(&mut head).map_err(io)?;
    if &head[..4] != TENSOR_MAGIC {
        return Err(GridError::BadMagic { expected: "VWGT" });
    }
    if head[4] != 0 {
        return Err(GridError::Unsupported(format!("dtype {}", head[4])));
    }
    let rank = head[5] as usize;
    if rank == 0 {
        return Err(GridError::ShapeOverflow("rank 0".into()));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut count = 1usize;
    for _ in 0..rank {
        let mut b = [0u8; 4];
        reader.read_exact(&mut b).map_err(io)?;
        let d = u32::from_le_bytes(b) as usize;
        if d == 0 {
            return Err(GridError::ShapeOverflow("zero dimension".into()));
        }
        count = count
            .checked_mul(d)
            .filter(|c| *c <= (isize::MAX as usize) / 4)
            .ok_or_else(|| GridError::ShapeOverflow(format!("{dims:?}x{d}")))?;
        dims.push(d);
    }
    let mut bytes = vec![0u8; count * 4];
    reader.read_exact(&mut bytes).map_err(io)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((dims, data))
}

pub fn write_tensor(path: &Path, tensor: &GridTensor) -> Result<(), GridError> {
    let bytes = encode_tensor(&[tensor.rows, tensor.cols, tensor.channels], &tensor.data)?;
    let mut f = std::fs::File::create(path).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(&bytes).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a rank-3 VWGT file as a grid tensor (rank 2 is read as one channel).
pub fn read_tensor(path: &Path) -> Result<GridTensor, GridError> {
    let f = std::fs::File::open(path).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let (dims, data) = decode_tensor(std::io::BufReader::new(f)).map_err(|e| match e {
        GridError::Io { source, .. } => GridError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })?;
    let (rows, cols, channels) = match dims.as_slice() {
        [r, c, ch] => (*r, *c, *ch),
        [r, c] => (*r, *c, 1),
        _ => return Err(GridError::Unsupported(format!("rank {} tensor", dims.len()))),
    };
    Ok(GridTensor {
        rows,
        cols,
        channels,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Annotation, FieldSchema, TokenBox};

    fn tok(i: usize, text: &str, x: u32, y: u32, w: u32, h: u32) -> TokenBox {
        TokenBox {
            index: i,
            text: text.into(),
            x,
            y,
            w,
            h,
        }
    }

    fn spec(rows: usize, cols: usize, dim: usize) -> GridSpec {
        GridSpec { rows, cols, dim }
    }

    #[test]
    fn scale_box_examples() {
        let s = spec(150, 200, 4);
        let cb = scale_box(Rect::new(100, 200, 40, 20), 800, 600, &s);
        assert_eq!((cb.col_start, cb.col_end, cb.row_start, cb.row_end), (25, 35, 50, 55));
        let cb = scale_box(Rect::new(7, 3, 1, 1), 800, 600, &s);
        assert_eq!(cb.area(), 1);
        let cb = scale_box(Rect::new(0, 0, 800, 600), 800, 600, &s);
        assert_eq!((cb.col_start, cb.col_end, cb.row_start, cb.row_end), (0, 200, 0, 150));
        let cb = scale_box(Rect::new(799, 599, 1, 1), 800, 600, &s);
        assert_eq!((cb.col_start, cb.col_end, cb.row_start, cb.row_end), (199, 200, 149, 150));
    }

    #[test]
    fn layout_cells() {
        // 4x4 page on a 4x4 grid: one token covering rows 1..3, cols 1..3
        let doc = Document::new("d", 8, 8, None, vec![tok(0, "a", 2, 2, 4, 4)]).unwrap();
        let g = rasterize_layout(&doc, &spec(4, 4, 2));
        let ones = g.data.chunks(3).filter(|c| c == &[1.0, 1.0, 1.0]).count();
        assert_eq!(ones, 4);
        for r in 0..4 {
            for c in 0..4 {
                let inside = (1..3).contains(&r) && (1..3).contains(&c);
                assert_eq!(g.cell(r, c)[0] == 1.0, inside);
            }
        }
        let empty = Document::new("e", 8, 8, None, vec![]).unwrap();
        assert!(rasterize_layout(&empty, &spec(4, 4, 2)).data.iter().all(|&v| v == 0.0));
        let overlap = Document::new(
            "o",
            8,
            8,
            None,
            vec![tok(0, "a", 0, 0, 6, 6), tok(1, "b", 2, 2, 6, 6)],
        )
        .unwrap();
        let g = rasterize_layout(&overlap, &spec(4, 4, 2));
        assert!(g.data.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn wordgrid_overwrite_rule() {
        let e = Embedder::hashed(8).unwrap();
        let doc = Document::new(
            "d",
            16,
            16,
            None,
            vec![tok(0, "first", 0, 0, 8, 8), tok(1, "second", 4, 4, 8, 8)],
        )
        .unwrap();
        let s = spec(8, 8, 8);
        let g = rasterize_wordgrid(&doc, &s, &e).unwrap();
        assert_eq!(g.cell(0, 0), &e.embed_token("first")[..]);
        assert_eq!(g.cell(3, 3), &e.embed_token("second")[..]);
        assert_eq!(g.cell(2, 2), &e.embed_token("second")[..]);
        assert!(g.cell(7, 0).iter().all(|&v| v == 0.0));
        assert!(matches!(
            rasterize_wordgrid(&doc, &spec(8, 8, 4), &e),
            Err(GridError::DimMismatch { .. })
        ));
    }

    #[test]
    fn pad_encoding_cells() {
        let e = Embedder::hashed(4).unwrap();
        let mut img = RgbImage::filled(16, 16, [255, 255, 255]);
        img.fill_rect(Rect::new(12, 12, 4, 4), [255, 0, 0]);
        let doc = Document::new("d", 16, 16, Some(img), vec![tok(0, "x", 0, 0, 4, 4)]).unwrap();
        let s = spec(8, 8, 4);
        let g = rasterize_vwg_pad(&doc, &s, &e).unwrap();
        assert_eq!(&g.cell(0, 0)[4..], &[0.0, 0.0, 0.0]);
        assert_eq!(&g.cell(0, 0)[..4], &e.embed_token("x")[..]);
        assert_eq!(g.cell(7, 7), &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(g.cell(4, 2), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);

        let blank = Document::new("b", 16, 16, Some(RgbImage::filled(16, 16, [255; 3])), vec![]).unwrap();
        let g = rasterize_vwg_pad(&blank, &s, &e).unwrap();
        assert!(g.data.chunks(7).all(|c| c == [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]));

        let no_img = Document::new("n", 16, 16, None, vec![]).unwrap();
        assert!(matches!(rasterize_vwg_pad(&no_img, &s, &e), Err(GridError::MissingImage(_))));
        assert!(matches!(
            make_two_encoder_inputs(&no_img, &s, &e),
            Err(GridError::MissingImage(_))
        ));
    }

    #[test]
    fn two_encoder_inputs() {
        let e = Embedder::hashed(4).unwrap();
        let img = RgbImage::filled(16, 16, [10, 20, 30]);
        let doc = Document::new("d", 16, 16, Some(img), vec![tok(0, "x", 0, 0, 4, 4)]).unwrap();
        let s = spec(8, 8, 4);
        let (wg, im) = make_two_encoder_inputs(&doc, &s, &e).unwrap();
        assert_eq!(wg.shape(), (8, 8, 4));
        assert_eq!(im.shape(), (8, 8, 3));
        assert_eq!(wg, rasterize_wordgrid(&doc, &s, &e).unwrap());
        // image is not zeroed under tokens
        assert_eq!(im.cell(0, 0), &[10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0]);
    }

    #[test]
    fn resize_center_sampling() {
        let mut img = RgbImage::filled(2, 2, [0, 0, 0]);
        img.set_pixel(1, 1, [255, 51, 0]);
        let t = resize_image(&img, 1, 1);
        assert_eq!(t.data, vec![1.0, 0.2, 0.0]);
        let mut img = RgbImage::filled(3, 2, [0, 0, 0]);
        for (i, p) in img.pixels.iter_mut().enumerate() {
            *p = i as u8;
        }
        let t = resize_image(&img, 2, 3);
        let expect: Vec<f32> = (0..18).map(|i| i as f32 / 255.0).collect();
        assert_eq!(t.data, expect);
        let t = resize_image(&RgbImage::filled(7, 5, [9, 9, 9]), 3, 4);
        assert!(t.data.iter().all(|&v| v == 9.0 / 255.0));
    }

    #[test]
    fn target_mask() {
        let schema = FieldSchema::new(["a", "b"]).unwrap();
        let doc = Document::new(
            "d",
            16,
            16,
            None,
            vec![tok(0, "x", 0, 0, 4, 4), tok(1, "y", 8, 8, 4, 4)],
        )
        .unwrap();
        let mut ann = Annotation::empty(&schema);
        ann.regions[1].push(Rect::new(8, 8, 4, 4));
        let ld = LabeledDocument::new(doc.clone(), ann, &schema).unwrap();
        let m = rasterize_target_mask(&ld, &spec(8, 8, 2));
        assert_eq!(m.data.iter().filter(|&&v| v == 2).count(), 4);
        assert_eq!(m.get(4, 4), 2);
        assert_eq!(m.get(5, 5), 2);
        assert_eq!(m.data.iter().filter(|&&v| v != 0 && v != 2).count(), 0);
        let unann = LabeledDocument::new(doc, Annotation::empty(&schema), &schema).unwrap();
        assert!(rasterize_target_mask(&unann, &spec(8, 8, 2)).data.iter().all(|&v| v == 0));
    }

    #[test]
    fn tensor_file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.vwgt");
        let t = GridTensor {
            rows: 2,
            cols: 3,
            channels: 2,
            data: vec![1.5, -0.0, f32::MIN_POSITIVE, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 1e-30, -7.25],
        };
        write_tensor(&p, &t).unwrap();
        let back = read_tensor(&p).unwrap();
        assert_eq!(back.shape(), t.shape());
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.data), bits(&t.data));

        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..6], b"VWGT\x00\x03");
        assert_eq!(&bytes[6..10], &2u32.to_le_bytes());

        let bad = dir.path().join("bad.vwgt");
        std::fs::write(&bad, b"NOPE\x00\x01\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(read_tensor(&bad), Err(GridError::BadMagic { .. })));

        std::fs::write(&bad, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_tensor(&bad), Err(GridError::Io { .. })));

        let empty = GridTensor {
            rows: 0,
            cols: 3,
            channels: 1,
            data: vec![],
        };
        assert!(matches!(write_tensor(&p, &empty), Err(GridError::ShapeOverflow(_))));
    }

    #[test]
    fn mask_tensor_conversion() {
        let mut m = LabelMask::zeros(2, 2);
        m.set(1, 0, 3);
        let t = m.to_tensor();
        assert_eq!(LabelMask::from_tensor(&t), Some(m));
        let mut bad = t.clone();
        bad.data[0] = 0.5;
        assert_eq!(LabelMask::from_tensor(&bad), None);
    }
}
