//! Deterministic pseudo-invoice generator.
//!
//! Pages are laid out on a 256×256 reference frame that is scaled to the
//! requested size. Text is drawn with 3×5 block glyphs, so every pixel, box
//! and annotation is integer arithmetic on top of the seeded [`Rng`].

use super::{
    Annotation, CorpusError, Dataset, Document, FieldSchema, LabeledDocument, Rect, RgbImage,
    TokenBox,
};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthVariant {
    /// White pages; a unique keyword line precedes every field value.
    TextKeyed,
    /// Field values sit on field-specific tinted backgrounds; decoys with the
    /// same text distribution sit on white.
    VisualKeyed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_docs: usize,
    pub variant: SynthVariant,
    pub image_width: u32,
    pub image_height: u32,
    pub seed: u64,
    pub schema: FieldSchema,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_docs: 100,
            variant: SynthVariant::VisualKeyed,
            image_width: 256,
            image_height: 256,
            seed: 0,
            schema: FieldSchema::invoice_default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.num_docs == 0 {
            return Err(CorpusError::InvalidConfig("num_docs must be at least 1".into()));
        }
        if self.image_width < 64 || self.image_height < 64 {
            return Err(CorpusError::InvalidConfig(format!(
                "image dimensions must be at least 64, got {}x{}",
                self.image_width, self.image_height
            )));
        }
        self.schema.validate()
    }
}

const FIELD_PRESENT_P: f64 = 0.9;
const REF: u32 = 256;
const CHAR_ADVANCE: u32 = 4;
const GLYPH_H: u32 = 5;
const WORD_GAP: u32 = 5;
const LINE_GAP: u32 = 6;
const JITTER: i64 = 3;
const TINT_MARGIN: u32 = 6;
const SLOT_RIGHT_MARGIN: u32 = 10;

const INK: [u8; 3] = [30, 30, 30];
const RULE: [u8; 3] = [160, 160, 160];
const WHITE: [u8; 3] = [255, 255, 255];
const TINTS: [[u8; 3]; 6] = [
    [255, 190, 190],
    [190, 235, 190],
    [190, 200, 255],
    [250, 225, 140],
    [230, 190, 250],
    [180, 240, 240],
];

const RECEIVERS: [&str; 10] = [
    "acme", "stark", "wayne", "hooli", "wonka", "umbra", "delta", "atlas", "nova", "zenit",
];
const RECEIVER_SUFFIX: [&str; 6] = ["corp", "ltd", "inc", "sa", "gmbh", "llc"];
const SUPPLIERS: [&str; 10] = [
    "orion", "apex", "nimbo", "vega", "lumen", "terra", "pixel", "omega", "sigma", "polar",
];
const SUPPLIER_SUFFIX: [&str; 6] = ["group", "co", "intl", "labs", "sarl", "ag"];
const INFO_PREFIX: [&str; 3] = ["inv#", "no.", "ref"];
const CURRENCIES: [&str; 3] = ["eur", "usd", "gbp"];
const FILLER: [&str; 10] = [
    "date", "page", "qty", "item", "vat", "note", "desc", "unit", "rate", "memo",
];

/// 3×5 glyph rows (bit 2 = leftmost column). Unknown characters are solid blocks.
pub fn glyph_rows(c: char) -> [u8; 5] {
    match c.to_ascii_lowercase() {
        'a' => [0b010, 0b101, 0b111, 0b101, 0b101],
        'b' => [0b110, 0b101, 0b110, 0b101, 0b110],
        'c' => [0b011, 0b100, 0b100, 0b100, 0b011],
        'd' => [0b110, 0b101, 0b101, 0b101, 0b110],
        'e' => [0b111, 0b100, 0b110, 0b100, 0b111],
        'f' => [0b111, 0b100, 0b110, 0b100, 0b100],
        'g' => [0b011, 0b100, 0b101, 0b101, 0b011],
        'h' => [0b101, 0b101, 0b111, 0b101, 0b101],
        'i' => [0b111, 0b010, 0b010, 0b010, 0b111],
        'j' => [0b001, 0b001, 0b001, 0b101, 0b010],
        'k' => [0b101, 0b101, 0b110, 0b101, 0b101],
        'l' => [0b100, 0b100, 0b100, 0b100, 0b111],
        'm' => [0b101, 0b111, 0b111, 0b101, 0b101],
        'n' => [0b110, 0b101, 0b101, 0b101, 0b101],
        'o' => [0b010, 0b101, 0b101, 0b101, 0b010],
        'p' => [0b110, 0b101, 0b110, 0b100, 0b100],
        'q' => [0b010, 0b101, 0b101, 0b110, 0b011],
        'r' => [0b110, 0b101, 0b110, 0b101, 0b101],
        's' => [0b011, 0b100, 0b010, 0b001, 0b110],
        't' => [0b111, 0b010, 0b010, 0b010, 0b010],
        'u' => [0b101, 0b101, 0b101, 0b101, 0b111],
        'v' => [0b101, 0b101, 0b101, 0b101, 0b010],
        'w' => [0b101, 0b101, 0b111, 0b111, 0b101],
        'x' => [0b101, 0b101, 0b010, 0b101, 0b101],
        'y' => [0b101, 0b101, 0b010, 0b010, 0b010],
        'z' => [0b111, 0b001, 0b010, 0b100, 0b111],
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b110, 0b001, 0b010, 0b100, 0b111],
        '3' => [0b110, 0b001, 0b010, 0b001, 0b110],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b110, 0b001, 0b110],
        '6' => [0b011, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b110],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        ',' => [0b000, 0b000, 0b000, 0b010, 0b100],
        ':' => [0b000, 0b010, 0b000, 0b010, 0b000],
        '#' => [0b101, 0b111, 0b101, 0b111, 0b101],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        '/' => [0b001, 0b001, 0b010, 0b100, 0b100],
        '_' => [0b000, 0b000, 0b000, 0b000, 0b111],
        _ => [0b111; 5],
    }
}

/// Page geometry: reference-frame to pixel mapping and glyph scale.
struct Page {
    width: u32,
    height: u32,
    glyph: u32,
}

impl Page {
    fn px(&self, rx: i64) -> i64 {
        rx * self.width as i64 / REF as i64
    }

    fn py(&self, ry: i64) -> i64 {
        ry * self.height as i64 / REF as i64
    }

    fn text_width(&self, text: &str) -> u32 {
        (text.chars().count() as u32 * CHAR_ADVANCE - 1) * self.glyph
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Background,
    Field(usize),
}

struct Placed {
    text: String,
    rect: Rect,
    // (section, row, col, line, x) reading-order key
    order: (u32, u32, u32, u32, u32),
}

enum SlotContent {
    Field(usize),
    Decoy(usize),
    Filler,
}

fn field_value(rng: &mut Rng, schema: &FieldSchema, field: usize) -> Vec<String> {
    let kind = match schema.fields[field].as_str() {
        "receiver" => 0,
        "supplier" => 1,
        "invoice_info" => 2,
        "total" => 3,
        _ => field % 4,
    };
    match kind {
        0 => vec![
            rng.choose(&RECEIVERS).to_string(),
            rng.choose(&RECEIVER_SUFFIX).to_string(),
        ],
        1 => vec![
            rng.choose(&SUPPLIERS).to_string(),
            rng.choose(&SUPPLIER_SUFFIX).to_string(),
        ],
        2 => vec![
            rng.choose(&INFO_PREFIX).to_string(),
            format!("{}", rng.range_i64(10_000, 99_999)),
        ],
        _ => {
            let int_digits = rng.range_i64(1, 4) as u32;
            let int_part = rng.range_i64(10i64.pow(int_digits - 1), 10i64.pow(int_digits) - 1);
            vec![
                format!("{int_part}.{:02}", rng.below(100)),
                rng.choose(&CURRENCIES).to_string(),
            ]
        }
    }
}

fn filler_value(rng: &mut Rng) -> Vec<String> {
    let mut words = vec![rng.choose(&FILLER).to_string()];
    if rng.chance(0.5) {
        words.push(format!("{}", rng.range_i64(1, 99)));
    }
    words
}

fn tint(field: usize) -> [u8; 3] {
    TINTS[field % TINTS.len()]
}

/// Lays `words` out on one line from `(x, y)`, skipping words that would cross
/// `right_limit` or the page edge. The first word may ignore `right_limit`.
fn layout_line(page: &Page, words: &[String], x: i64, y: i64, right_limit: i64) -> Vec<(String, Rect)> {
    let mut out = Vec::new();
    let h = GLYPH_H * page.glyph;
    if y < 0 || y + h as i64 > page.height as i64 {
        return out;
    }
    let mut cx = x.max(0);
    for (i, w) in words.iter().enumerate() {
        let tw = page.text_width(w) as i64;
        let end = cx + tw;
        let limit = if i == 0 { page.width as i64 } else { right_limit.min(page.width as i64) };
        if end > limit {
            break;
        }
        out.push((w.clone(), Rect::new(cx as u32, y as u32, tw as u32, h)));
        cx = end + (WORD_GAP * page.glyph) as i64;
    }
    out
}

fn draw_text(image: &mut RgbImage, page: &Page, text: &str, rect: Rect) {
    let g = page.glyph;
    for (j, c) in text.chars().enumerate() {
        let rows = glyph_rows(c);
        for (gy, bits) in rows.iter().enumerate() {
            for gx in 0..3u32 {
                if bits & (0b100 >> gx) != 0 {
                    let px = rect.x + (j as u32 * CHAR_ADVANCE + gx) * g;
                    let py = rect.y + gy as u32 * g;
                    image.fill_rect(Rect::new(px, py, g, g), INK);
                }
            }
        }
    }
}

fn bbox(rects: &[Rect]) -> Rect {
    let x0 = rects.iter().map(|r| r.x).min().unwrap();
    let y0 = rects.iter().map(|r| r.y).min().unwrap();
    let x1 = rects.iter().map(|r| r.right()).max().unwrap();
    let y1 = rects.iter().map(|r| r.bottom()).max().unwrap();
    Rect::new(x0, y0, x1 - x0, y1 - y0)
}

fn expand(r: Rect, margin: u32, page: &Page) -> Rect {
    let x0 = r.x.saturating_sub(margin);
    let y0 = r.y.saturating_sub(margin);
    let x1 = (r.right() + margin).min(page.width);
    let y1 = (r.bottom() + margin).min(page.height);
    Rect::new(x0, y0, x1 - x0, y1 - y0)
}

/// Generates one page. `compact` forces a single field into the first slot
/// of the first template, which always fits on a 64×64 page.
fn generate_page(
    rng: &mut Rng,
    config: &SynthConfig,
    id: String,
    compact: bool,
) -> Result<LabeledDocument, CorpusError> {
    let schema = &config.schema;
    let k = schema.k();
    let page = Page {
        width: config.image_width,
        height: config.image_height,
        glyph: (config.image_width.min(config.image_height) / REF).max(1),
    };
    let visual = config.variant == SynthVariant::VisualKeyed;
    let mut placed: Vec<Placed> = Vec::new();

    // header and footer
    let date = format!(
        "{:02}/{:02}/{:02}",
        rng.range_i64(1, 28),
        rng.range_i64(1, 12),
        rng.range_i64(15, 24)
    );
    let header = vec!["invoice".to_string(), date];
    for (text, rect) in layout_line(&page, &header, page.px(8), page.py(8), page.width as i64) {
        placed.push(Placed {
            order: (0, 0, 0, 0, rect.x),
            text,
            rect,
        });
    }

    let template = if compact { 0 } else { rng.below(3) as usize };
    let (cols, x_off, y_off) = [(2u32, 0u32, 0u32), (2, 10, 6), (3, 0, 0)][template];
    let n_slots = (2 * k).max(cols as usize);
    let rows = n_slots.div_ceil(cols as usize) as u32;
    let col_w = (240 - x_off) / cols;
    let top = 30 + y_off;
    let row_h = (REF - top - 30) / rows;

    let mut present: Vec<usize> = if compact {
        vec![rng.below(k as u64) as usize]
    } else {
        (0..k).filter(|_| rng.chance(FIELD_PRESENT_P)).collect()
    };
    if present.is_empty() {
        present.push(rng.below(k as u64) as usize);
    }

    let mut slots: Vec<usize> = (0..rows as usize * cols as usize).collect();
    if !compact {
        rng.shuffle(&mut slots);
    }
    let mut contents: Vec<(usize, SlotContent)> = Vec::new();
    let mut slot_iter = slots.into_iter();
    for &f in &present {
        contents.push((slot_iter.next().unwrap(), SlotContent::Field(f)));
    }
    if !compact {
        for &f in &present {
            if let Some(s) = slot_iter.next() {
                contents.push((s, SlotContent::Decoy(f)));
            }
        }
        for s in slot_iter {
            if rng.chance(0.5) {
                contents.push((s, SlotContent::Filler));
            }
        }
    }
    // draw order independent of assignment order
    contents.sort_by_key(|(s, _)| *s);

    let mut image = RgbImage::filled(page.width, page.height, WHITE);
    let rule_y = page.py(20) as u32;
    image.fill_rect(
        Rect::new(page.px(8) as u32, rule_y, (page.px(248) - page.px(8)) as u32, page.glyph),
        RULE,
    );

    let mut tints: Vec<(Rect, [u8; 3])> = Vec::new();
    let mut regions: Vec<Vec<Rect>> = vec![Vec::new(); k];
    let line_step = ((GLYPH_H + LINE_GAP) * page.glyph) as i64;

    for (slot, content) in contents {
        let row = slot as u32 / cols;
        let col = slot as u32 % cols;
        let jx = if compact { 0 } else { rng.range_i64(-JITTER, JITTER) };
        let jy = if compact { 0 } else { rng.range_i64(-JITTER, JITTER) };
        let sx = page.px((8 + x_off + col * col_w) as i64 + 2 + jx);
        let sy = page.py((top + row * row_h) as i64 + 2 + jy);
        let right = page.px((8 + x_off + (col + 1) * col_w) as i64) - (SLOT_RIGHT_MARGIN * page.glyph) as i64;

        let (lines, role): (Vec<Vec<String>>, Role) = match content {
            SlotContent::Field(f) => {
                let value = field_value(rng, schema, f);
                if visual {
                    (vec![value], Role::Field(f))
                } else {
                    (vec![vec![format!("{}:", schema.fields[f])], value], Role::Field(f))
                }
            }
            SlotContent::Decoy(f) => (vec![field_value(rng, schema, f)], Role::Background),
            SlotContent::Filler => (vec![filler_value(rng)], Role::Background),
        };
        let value_line = lines.len() - 1;
        for (li, words) in lines.iter().enumerate() {
            let y = sy + li as i64 * line_step;
            let line_role = if li == value_line { role } else { Role::Background };
            let laid = layout_line(&page, words, sx, y, right);
            if laid.is_empty() {
                continue;
            }
            if let Role::Field(f) = line_role {
                let rects: Vec<Rect> = laid.iter().map(|(_, r)| *r).collect();
                let b = bbox(&rects);
                regions[f].push(expand(b, 1, &page));
                if visual {
                    tints.push((expand(b, TINT_MARGIN * page.glyph, &page), tint(f)));
                }
            }
            for (text, rect) in laid {
                placed.push(Placed {
                    order: (1, row, col, li as u32, rect.x),
                    text,
                    rect,
                });
            }
        }
    }

    let footer = vec!["thank".to_string(), "you".to_string()];
    for (text, rect) in layout_line(&page, &footer, page.px(8), page.py(236), page.width as i64) {
        placed.push(Placed {
            order: (2, 0, 0, 0, rect.x),
            text,
            rect,
        });
    }

    for (r, c) in &tints {
        image.fill_rect(*r, *c);
    }
    for p in &placed {
        draw_text(&mut image, &page, &p.text, p.rect);
    }

    placed.sort_by_key(|p| p.order);
    // drop tokens colliding with an earlier token (only possible on tiny pages)
    let mut kept: Vec<Placed> = Vec::with_capacity(placed.len());
    for p in placed {
        let overlaps = kept.iter().any(|q| q.rect.intersect(&p.rect).is_some());
        if !overlaps {
            kept.push(p);
        }
    }
    let tokens = kept
        .iter()
        .enumerate()
        .map(|(i, p)| TokenBox {
            index: i,
            text: p.text.clone(),
            x: p.rect.x,
            y: p.rect.y,
            w: p.rect.w,
            h: p.rect.h,
        })
        .collect();
    let document = Document::new(id, page.width, page.height, Some(image), tokens)?;
    LabeledDocument::new(document, Annotation { regions }, schema)
}

/// Generates `config.num_docs` labeled pseudo-invoices.
///
/// Document `i` draws from its own stream derived from `(seed, i)`, so the
/// output is independent of generation order.
pub fn synth_generate(config: &SynthConfig) -> Result<Dataset, CorpusError> {
    config.validate()?;
    let docs = (0..config.num_docs)
        .map(|i| {
            let mut rng = Rng::with_stream(config.seed, i as u64 + 1);
            let id = format!("doc{i:05}");
            for _ in 0..8 {
                let ld = generate_page(&mut rng, config, id.clone(), false)?;
                if ld.gt_assignment.iter().any(|&c| c > 0) {
                    return Ok(ld);
                }
            }
            generate_page(&mut rng, config, id, true)
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;
    Ok(Dataset {
        schema: config.schema.clone(),
        docs,
    })
}
