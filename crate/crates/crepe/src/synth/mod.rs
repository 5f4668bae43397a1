//! Deterministic synthetic document generation.
//!
//! Every generator is a pure function of (seed, config, schema): one seeded
//! RNG drives all choices, so a corpus can be produced doc-by-doc in any
//! order, or in parallel, with identical results.

pub mod corpus;
pub mod font;
pub mod raster;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{BBox, Quad};
use crate::schema::grammar::reading_order;
use crate::schema::tree::{ParseNode, ParseTree};
use crate::schema::{Schema, Task};
pub use font::GlyphFont;
pub use raster::{Image, WordPlacement};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub width: usize,
    pub height: usize,
    /// Glyph pixel scale; glyph cells are 5x7 at scale 1.
    pub scale: f64,
    /// Maximum per-line rotation magnitude in degrees.
    pub rotation_max_deg: f64,
    pub noise_density: f64,
    pub margin: usize,
    pub line_gap: usize,
    pub min_lines: usize,
    pub max_lines: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub max_word_len: usize,
    pub min_items: usize,
    pub max_items: usize,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            width: 96,
            height: 96,
            scale: 1.0,
            rotation_max_deg: 8.0,
            noise_density: 0.01,
            margin: 3,
            line_gap: 2,
            min_lines: 3,
            max_lines: 10,
            min_words: 1,
            max_words: 5,
            max_word_len: 7,
            min_items: 2,
            max_items: 6,
            min_objects: 1,
            max_objects: 3,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 64 || self.height < 64 {
            return Err(Error::Dimension(format!(
                "image size {}x{} below minimum 64x64",
                self.width, self.height
            )));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::Dimension("glyph scale must be positive".to_string()));
        }
        for (lo, hi, what) in [
            (self.min_lines, self.max_lines, "lines"),
            (self.min_words, self.max_words, "words"),
            (self.min_objects, self.max_objects, "objects"),
            (self.min_items, self.max_items, "items"),
        ] {
            if lo > hi {
                return Err(Error::Argument(format!("min {what} exceeds max {what}")));
            }
        }
        Ok(())
    }
}

/// Generated document: raster plus every annotation a task might need.
/// `layout` doubles as the object list for scene documents; `parses` holds
/// the ordered per-document annotation of a multi-document composition.
#[derive(Clone, Debug)]
pub struct SynthDoc {
    pub image: Image,
    pub words: Vec<(String, Quad)>,
    pub parse: Option<ParseTree>,
    pub parses: Option<Vec<ParseTree>>,
    pub layout: Option<Vec<(String, BBox)>>,
    pub label: Option<String>,
    pub task: Task,
}

#[derive(Clone, Debug)]
pub struct PlacedWord {
    pub text: String,
    pub placement: WordPlacement,
}

/// Gap between words along a baseline, in glyph columns.
const WORD_GAP_COLS: f64 = 4.0;
/// Bounds slack covering the quad padding, in glyph units.
const BOUNDS_SLACK: f64 = 2.0;
/// Fill value for scene objects and figure blocks.
const SHAPE_SHADE: u8 = 90;

/// Lays out lines top to bottom starting at `start_y`. Words that overflow
/// the right edge and lines that overflow the bottom are dropped, never an
/// error. Returns the placed lines and the final cursor position.
fn layout_lines(
    rng: &mut impl Rng,
    cfg: &GenConfig,
    rot_max_deg: f64,
    lines: &[Vec<String>],
    start_y: f64,
) -> (Vec<Vec<PlacedWord>>, f64) {
    let s = cfg.scale;
    let margin = cfg.margin as f64;
    let slack = BOUNDS_SLACK * s;
    let right = cfg.width as f64 - margin - slack;
    let bottom = cfg.height as f64 - margin - slack;
    let mut cursor = start_y.max(margin + slack);
    let mut out = Vec::new();
    for words in lines {
        let x0 = margin + slack + rng.random_range(0.0..3.0) * s;
        let angle = if rot_max_deg > 0.0 {
            rng.random_range(-rot_max_deg..=rot_max_deg).to_radians()
        } else {
            0.0
        };
        let mut kept: Vec<&String> = Vec::new();
        let mut cols = 0.0;
        for w in words {
            let (wc, _) = raster::word_extent(w);
            let add = if kept.is_empty() { wc } else { WORD_GAP_COLS + wc };
            let extent = (cols + add) * s + 7.0 * s * angle.sin().abs();
            if x0 + extent > right {
                break;
            }
            kept.push(w);
            cols += add;
        }
        if kept.is_empty() {
            continue;
        }
        let line_px = cols * s;
        let vert = 7.0 * s * angle.cos() + line_px * angle.sin().abs() + slack;
        if cursor + vert > bottom {
            break;
        }
        let oy = if angle < 0.0 {
            cursor + line_px * angle.sin().abs()
        } else {
            cursor
        };
        let (sin, cos) = angle.sin_cos();
        let mut u = 0.0;
        let mut placed = Vec::new();
        for w in kept {
            let (wc, _) = raster::word_extent(w);
            placed.push(PlacedWord {
                text: w.clone(),
                placement: WordPlacement {
                    x: x0 + u * s * cos,
                    y: oy + u * s * sin,
                    scale: s,
                    angle,
                },
            });
            u += wc + WORD_GAP_COLS;
        }
        out.push(placed);
        cursor += vert + cfg.line_gap as f64;
    }
    (out, cursor)
}

/// Worst-case line count that fits vertically at the given rotation bound.
fn line_capacity(cfg: &GenConfig, rot_max_deg: f64) -> usize {
    let s = cfg.scale;
    let margin = cfg.margin as f64;
    let slack = BOUNDS_SLACK * s;
    let budget = cfg.height as f64 - margin - slack - (margin + slack);
    let drift = (cfg.width as f64 - 2.0 * margin) * rot_max_deg.to_radians().sin().abs();
    let slot = 7.0 * s + drift + slack + cfg.line_gap as f64;
    (budget / slot).floor().max(0.0) as usize
}

fn render_placed(
    cfg: &GenConfig,
    seed_noise: &mut impl Rng,
    placed: &[Vec<PlacedWord>],
) -> Result<(Image, Vec<(String, Quad)>)> {
    let font = GlyphFont::new();
    let mut img = Image::blank(cfg.width, cfg.height);
    raster::speckle(&mut img, seed_noise, cfg.noise_density);
    let mut words = Vec::new();
    for line in placed {
        for pw in line {
            raster::draw_word(&mut img, &font, &pw.text, &pw.placement);
            let quad = raster::word_quad(&pw.text, &pw.placement, cfg.width, cfg.height)?;
            words.push((pw.text.clone(), quad));
        }
    }
    Ok((img, words))
}

fn sort_reading_order(words: &mut [(String, Quad)]) {
    words.sort_by(|a, b| reading_order(&a.1.envelope(), &b.1.envelope()));
}

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
const DIGITS: &[u8] = b"0123456789";

fn random_word(rng: &mut impl Rng, min_len: usize, max_len: usize, pool: &[u8]) -> String {
    let len = rng.random_range(min_len.max(1)..=max_len.max(1));
    (0..len)
        .map(|_| pool[rng.random_range(0..pool.len())] as char)
        .collect()
}

/// Mostly letters with occasional digits and punctuation, as free OCR text.
fn random_ocr_word(rng: &mut impl Rng, max_len: usize) -> String {
    const PUNCT: &[u8] = b".,:-/%$#";
    let roll: f64 = rng.random();
    if roll < 0.7 {
        random_word(rng, 1, max_len, LETTERS)
    } else if roll < 0.9 {
        random_word(rng, 1, max_len.min(5), DIGITS)
    } else {
        let mut w = random_word(rng, 1, max_len.saturating_sub(1).max(1), LETTERS);
        w.push(PUNCT[rng.random_range(0..PUNCT.len())] as char);
        w
    }
}

/// Free-text page: random word lines with per-line rotation and speckle.
pub fn gen_ocr_doc(seed: u64, cfg: &GenConfig) -> Result<SynthDoc> {
    gen_ocr_doc_detailed(seed, cfg).map(|(doc, _)| doc)
}

/// Variant exposing word placements so callers can re-render single words.
pub fn gen_ocr_doc_detailed(seed: u64, cfg: &GenConfig) -> Result<(SynthDoc, Vec<PlacedWord>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_lines = rng.random_range(cfg.min_lines..=cfg.max_lines);
    let lines: Vec<Vec<String>> = (0..n_lines)
        .map(|_| {
            let n = rng.random_range(cfg.min_words..=cfg.max_words);
            (0..n).map(|_| random_ocr_word(&mut rng, cfg.max_word_len)).collect()
        })
        .collect();
    let (placed, _) = layout_lines(&mut rng, cfg, cfg.rotation_max_deg, &lines, 0.0);
    let (image, mut words) = render_placed(cfg, &mut rng, &placed)?;
    sort_reading_order(&mut words);
    let flat: Vec<PlacedWord> = placed.into_iter().flatten().collect();
    Ok((
        SynthDoc {
            image,
            words,
            parse: None,
            parses: None,
            layout: None,
            label: None,
            task: Task::Ocr,
        },
        flat,
    ))
}

/// Receipt lines are kept gentle so every essential line always fits.
const RECEIPT_ROT_DEG: f64 = 1.5;

/// Pseudo-receipt with store name, item/price pairs, a total, and rendered
/// distractor words (the "total" label and a courtesy line) that are absent
/// from the parse tree.
pub fn gen_parse_doc(seed: u64, cfg: &GenConfig, schema: &Schema) -> Result<SynthDoc> {
    cfg.validate()?;
    if schema.fields.len() < 3 {
        return Err(Error::Schema(
            "parse generation needs at least 3 declared fields".to_string(),
        ));
    }
    for name in ["store", "menu", "name", "price", "total"] {
        if !schema.fields.iter().any(|f| f == name) {
            return Err(Error::Schema(format!(
                "parse generation needs declared field '{name}'"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rot = cfg.rotation_max_deg.min(RECEIPT_ROT_DEG);

    // Horizontal capacity decides name length and price magnitude.
    let narrow = cfg.width as f64 / cfg.scale < 80.0;
    let name_len = if narrow { 3 } else { 6 };
    let max_cents = if narrow { 999 } else { 1999 };

    let capacity = line_capacity(cfg, rot);
    let essentials = 3; // store line, total line, courtesy line
    let max_items = cfg
        .max_items
        .min(capacity.saturating_sub(essentials))
        .max(cfg.min_items.max(1));
    let n_items = rng.random_range(cfg.min_items.max(1)..=max_items);

    let store_words = vec![random_word(&mut rng, 3, name_len, LETTERS)];
    let mut items = Vec::new();
    let mut total_cents: u64 = 0;
    for _ in 0..n_items {
        let name = random_word(&mut rng, 3, name_len, LETTERS);
        let cents = rng.random_range(50..=max_cents);
        total_cents += cents;
        items.push((name, format_cents(cents)));
    }
    let total_str = format_cents(total_cents);

    const COURTESY: [&str; 10] = [
        "thank", "you", "cash", "only", "visit", "again", "no", "refund", "open", "daily",
    ];
    let c0 = COURTESY[rng.random_range(0..COURTESY.len())];
    let c1 = COURTESY[rng.random_range(0..COURTESY.len())];

    let mut lines: Vec<Vec<String>> = vec![store_words.clone()];
    for (name, price) in &items {
        lines.push(vec![name.clone(), price.clone()]);
    }
    lines.push(vec!["total".to_string(), total_str.clone()]);
    lines.push(vec![c0.to_string(), c1.to_string()]);

    let (placed, _) = layout_lines(&mut rng, cfg, rot, &lines, 0.0);
    let placed_words = placed.iter().flatten().count();
    let expected: usize = lines.iter().map(Vec::len).sum();
    if placed_words < expected - 2 {
        // Only the courtesy line may legally be squeezed out.
        return Err(Error::Invariant(format!(
            "receipt layout dropped essential words ({placed_words} of {expected})"
        )));
    }
    let (image, mut words) = render_placed(cfg, &mut rng, &placed)?;
    sort_reading_order(&mut words);

    let mut roots = vec![ParseNode::Branch {
        name: "store".to_string(),
        children: vec![ParseNode::Leaf {
            segments: store_words,
        }],
    }];
    for (name, price) in &items {
        roots.push(ParseNode::Branch {
            name: "menu".to_string(),
            children: vec![
                ParseNode::Branch {
                    name: "name".to_string(),
                    children: vec![ParseNode::Leaf {
                        segments: vec![name.clone()],
                    }],
                },
                ParseNode::Branch {
                    name: "price".to_string(),
                    children: vec![ParseNode::Leaf {
                        segments: vec![price.clone()],
                    }],
                },
            ],
        });
    }
    roots.push(ParseNode::Branch {
        name: "total".to_string(),
        children: vec![ParseNode::Leaf {
            segments: vec![total_str],
        }],
    });

    Ok(SynthDoc {
        image,
        words,
        parse: Some(ParseTree::new(roots)),
        parses: None,
        layout: None,
        label: None,
        task: Task::Parse,
    })
}

pub fn format_cents(cents: u64) -> String {
    format!("{}.{:02}", cents / 100, cents % 100)
}

pub fn parse_cents(s: &str) -> Option<u64> {
    let (d, c) = s.split_once('.')?;
    if c.len() != 2 {
        return None;
    }
    Some(d.parse::<u64>().ok()? * 100 + c.parse::<u64>().ok()?)
}

/// Stacked titled blocks with category boxes: a title line, then text,
/// table, or figure blocks, all vertically disjoint.
pub fn gen_layout_doc(seed: u64, cfg: &GenConfig) -> Result<SynthDoc> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let font = GlyphFont::new();
    let mut img = Image::blank(cfg.width, cfg.height);
    raster::speckle(&mut img, &mut rng, cfg.noise_density);

    let margin = cfg.margin as f64;
    let slack = BOUNDS_SLACK * cfg.scale;
    let block_gap = 4.0 * cfg.scale;
    let bottom = cfg.height as f64 - margin - slack;
    let mut cursor = margin + slack;
    let mut words: Vec<(String, Quad)> = Vec::new();
    let mut elements: Vec<(String, BBox)> = Vec::new();

    let n_blocks = rng.random_range(2..=4);
    for b in 0..n_blocks {
        let category = if b == 0 {
            "title"
        } else {
            ["text", "table", "figure"][rng.random_range(0..3)]
        };
        if category == "figure" {
            let h = rng.random_range(8.0..16.0) * cfg.scale;
            let w = rng.random_range(20.0..40.0) * cfg.scale;
            if cursor + h > bottom {
                break;
            }
            let x0 = margin + slack;
            raster::fill_rect(
                &mut img,
                x0 as usize,
                cursor as usize,
                (x0 + w) as usize,
                (cursor + h) as usize,
                SHAPE_SHADE,
            );
            elements.push((
                category.to_string(),
                pixel_bbox(x0, cursor, x0 + w, cursor + h, cfg)?,
            ));
            cursor += h + block_gap;
            continue;
        }
        let lines: Vec<Vec<String>> = match category {
            "title" => vec![(0..rng.random_range(1..=2))
                .map(|_| random_word(&mut rng, 3, 6, LETTERS))
                .collect()],
            "table" => (0..rng.random_range(2..=3))
                .map(|_| {
                    vec![
                        random_word(&mut rng, 3, 5, LETTERS),
                        random_word(&mut rng, 2, 4, DIGITS),
                    ]
                })
                .collect(),
            _ => (0..rng.random_range(2..=3))
                .map(|_| {
                    (0..rng.random_range(2..=3))
                        .map(|_| random_word(&mut rng, 2, 5, LETTERS))
                        .collect()
                })
                .collect(),
        };
        let (placed, end) = layout_lines(&mut rng, cfg, 0.0, &lines, cursor);
        if placed.is_empty() {
            break;
        }
        let mut envelope: Option<BBox> = None;
        for pw in placed.iter().flatten() {
            raster::draw_word(&mut img, &font, &pw.text, &pw.placement);
            let quad = raster::word_quad(&pw.text, &pw.placement, cfg.width, cfg.height)?;
            envelope = Some(match envelope {
                None => quad.envelope(),
                Some(e) => e.enclosing(&quad.envelope()),
            });
            words.push((pw.text.clone(), quad));
        }
        elements.push((category.to_string(), envelope.expect("non-empty block")));
        cursor = end + block_gap;
    }

    sort_reading_order(&mut words);
    Ok(SynthDoc {
        image: img,
        words,
        parse: None,
        parses: None,
        layout: Some(elements),
        label: None,
        task: Task::Layout,
    })
}

fn pixel_bbox(x0: f64, y0: f64, x1: f64, y1: f64, cfg: &GenConfig) -> Result<BBox> {
    BBox::new(
        x0 / cfg.width as f64,
        y0 / cfg.height as f64,
        x1 / cfg.width as f64,
        y1 / cfg.height as f64,
    )
}

/// One of four visually distinct page templates, labeled by template name.
pub fn gen_class_doc(seed: u64, cfg: &GenConfig) -> Result<SynthDoc> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const LABELS: [&str; 4] = ["letter", "invoice", "receipt", "form"];
    let label = LABELS[rng.random_range(0..LABELS.len())];

    let mut lines: Vec<Vec<String>> = Vec::new();
    match label {
        "letter" => {
            lines.push(vec!["dear".to_string(), random_word(&mut rng, 3, 6, LETTERS)]);
            for _ in 0..3 {
                lines.push(
                    (0..rng.random_range(3..=4))
                        .map(|_| random_word(&mut rng, 2, 6, LETTERS))
                        .collect(),
                );
            }
            lines.push(vec!["yours".to_string(), "truly".to_string()]);
        }
        "invoice" => {
            lines.push(vec![
                "invoice".to_string(),
                random_word(&mut rng, 3, 4, DIGITS),
            ]);
            for _ in 0..rng.random_range(2..=3) {
                lines.push(vec![
                    random_word(&mut rng, 3, 6, LETTERS),
                    format_cents(rng.random_range(100..=9999)),
                ]);
            }
            lines.push(vec!["due".to_string(), format_cents(rng.random_range(100..=9999))]);
        }
        "receipt" => {
            lines.push(vec![random_word(&mut rng, 3, 6, LETTERS)]);
            for _ in 0..rng.random_range(2..=3) {
                lines.push(vec![
                    random_word(&mut rng, 3, 5, LETTERS),
                    format_cents(rng.random_range(50..=999)),
                ]);
            }
            lines.push(vec!["total".to_string(), format_cents(rng.random_range(100..=2999))]);
        }
        _ => {
            for _ in 0..rng.random_range(4..=5) {
                let mut key = random_word(&mut rng, 3, 6, LETTERS);
                key.push(':');
                lines.push(vec![key, random_word(&mut rng, 2, 6, LETTERS)]);
            }
        }
    }

    let (placed, _) = layout_lines(&mut rng, cfg, 0.0, &lines, 0.0);
    let (image, mut words) = render_placed(cfg, &mut rng, &placed)?;
    sort_reading_order(&mut words);
    Ok(SynthDoc {
        image,
        words,
        parse: None,
        parses: None,
        layout: None,
        label: Some(label.to_string()),
        task: Task::Class,
    })
}

/// Scattered filled shapes (circle, square, triangle) plus a few words;
/// object boxes land in `layout`, word quads in `words`.
pub fn gen_scene_doc(seed: u64, cfg: &GenConfig) -> Result<SynthDoc> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let font = GlyphFont::new();
    let mut img = Image::blank(cfg.width, cfg.height);
    raster::speckle(&mut img, &mut rng, cfg.noise_density);

    let w = cfg.width as f64;
    let h = cfg.height as f64;
    let mut objects: Vec<(String, BBox)> = Vec::new();
    let n_obj = rng.random_range(cfg.min_objects..=cfg.max_objects);
    for _ in 0..n_obj {
        let size = rng.random_range(12.0..26.0_f64).min(w / 3.0);
        let x0 = rng.random_range(2.0..(w - size - 2.0));
        let y0 = rng.random_range(2.0..(h - size - 2.0));
        let category = ["circle", "square", "triangle"][rng.random_range(0..3)];
        match category {
            "circle" => raster::fill_circle(
                &mut img,
                x0 + size / 2.0,
                y0 + size / 2.0,
                size / 2.0,
                SHAPE_SHADE,
            ),
            "square" => raster::fill_rect(
                &mut img,
                x0 as usize,
                y0 as usize,
                (x0 + size) as usize,
                (y0 + size) as usize,
                SHAPE_SHADE,
            ),
            _ => raster::fill_triangle(
                &mut img,
                x0 as usize,
                y0 as usize,
                (x0 + size) as usize,
                (y0 + size) as usize,
                SHAPE_SHADE,
            ),
        }
        objects.push((category.to_string(), pixel_bbox(x0, y0, x0 + size, y0 + size, cfg)?));
    }

    let mut words: Vec<(String, Quad)> = Vec::new();
    let n_words = rng.random_range(1..=4);
    for _ in 0..n_words {
        let text = random_ocr_word(&mut rng, cfg.max_word_len.min(5));
        let (cols, _) = raster::word_extent(&text);
        let rot = cfg.rotation_max_deg.to_radians();
        let angle = if rot > 0.0 {
            rng.random_range(-rot..=rot)
        } else {
            0.0
        };
        let slack = BOUNDS_SLACK * cfg.scale;
        let x_span = cols * cfg.scale + 7.0 * cfg.scale * angle.sin().abs();
        let y_span = 7.0 * cfg.scale + cols * cfg.scale * angle.sin().abs();
        if w - x_span - 2.0 * slack <= slack || h - y_span - 2.0 * slack <= slack {
            continue;
        }
        let x = rng.random_range(slack..(w - x_span - slack));
        let y = rng.random_range(slack..(h - y_span - slack));
        let y = if angle < 0.0 {
            y + cols * cfg.scale * angle.sin().abs()
        } else {
            y
        };
        let p = WordPlacement {
            x,
            y,
            scale: cfg.scale,
            angle,
        };
        raster::draw_word(&mut img, &font, &text, &p);
        let quad = raster::word_quad(&text, &p, cfg.width, cfg.height)?;
        words.push((text, quad));
    }

    sort_reading_order(&mut words);
    Ok(SynthDoc {
        image: img,
        words,
        parse: None,
        parses: None,
        layout: Some(objects),
        label: None,
        task: Task::Scene,
    })
}

/// Normalized affine placement of one pasted document on the canvas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PasteRegion {
    pub sx: f64,
    pub sy: f64,
    pub ox: f64,
    pub oy: f64,
}

impl PasteRegion {
    pub fn bbox(&self) -> BBox {
        BBox::canonical(self.ox, self.oy, self.ox + self.sx, self.oy + self.sy)
    }
}

/// Scales and pastes 1-4 parse documents onto one canvas; annotations are
/// the ordered per-document trees, and every quad moves through the paste
/// affine map.
pub fn compose_multidoc(docs: &[SynthDoc], seed: u64, cfg: &GenConfig) -> Result<SynthDoc> {
    compose_multidoc_detailed(docs, seed, cfg).map(|(doc, _)| doc)
}

pub fn compose_multidoc_detailed(
    docs: &[SynthDoc],
    seed: u64,
    cfg: &GenConfig,
) -> Result<(SynthDoc, Vec<PasteRegion>)> {
    cfg.validate()?;
    if docs.is_empty() || docs.len() > 4 {
        return Err(Error::Argument(format!(
            "multi-document composition takes 1-4 documents, got {}",
            docs.len()
        )));
    }
    let mut parses = Vec::new();
    for (i, doc) in docs.iter().enumerate() {
        if doc.task != Task::Parse {
            return Err(Error::Argument(format!(
                "document {i} has task {}, expected parse",
                doc.task
            )));
        }
        parses.push(doc.parse.clone().ok_or_else(|| {
            Error::Argument(format!("document {i} carries no parse annotation"))
        })?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let regions = paste_regions(&mut rng, docs.len());

    let mut canvas = Image::blank(cfg.width, cfg.height);
    let mut words = Vec::new();
    for (doc, region) in docs.iter().zip(&regions) {
        let x0 = (region.ox * cfg.width as f64).floor() as usize;
        let y0 = (region.oy * cfg.height as f64).floor() as usize;
        let w = ((region.sx * cfg.width as f64).floor() as usize).min(cfg.width - x0);
        let h = ((region.sy * cfg.height as f64).floor() as usize).min(cfg.height - y0);
        raster::paste_scaled(&mut canvas, &doc.image, x0, y0, w, h)?;
        for (text, quad) in &doc.words {
            words.push((
                text.clone(),
                quad.affine(region.sx, region.sy, region.ox, region.oy),
            ));
        }
    }

    Ok((
        SynthDoc {
            image: canvas,
            words,
            parse: None,
            parses: Some(parses),
            layout: None,
            label: None,
            task: Task::Multi,
        },
        regions,
    ))
}

/// Disjoint normalized regions: identity for one document, half splits for
/// two, 2x2 grid cells for three or four, each jittered inside its cell.
fn paste_regions(rng: &mut impl Rng, k: usize) -> Vec<PasteRegion> {
    if k == 1 {
        return vec![PasteRegion {
            sx: 1.0,
            sy: 1.0,
            ox: 0.0,
            oy: 0.0,
        }];
    }
    let cells: Vec<(f64, f64, f64, f64)> = if k == 2 {
        if rng.random_bool(0.5) {
            vec![(0.0, 0.0, 0.5, 1.0), (0.5, 0.0, 0.5, 1.0)]
        } else {
            vec![(0.0, 0.0, 1.0, 0.5), (0.0, 0.5, 1.0, 0.5)]
        }
    } else {
        vec![
            (0.0, 0.0, 0.5, 0.5),
            (0.5, 0.0, 0.5, 0.5),
            (0.0, 0.5, 0.5, 0.5),
            (0.5, 0.5, 0.5, 0.5),
        ]
    };
    cells
        .into_iter()
        .take(k)
        .map(|(cx, cy, cw, ch)| {
            let f = rng.random_range(0.86..=0.97);
            let sx = cw * f;
            let sy = ch * f;
            let ox = cx + rng.random_range(0.0..=(cw - sx));
            let oy = cy + rng.random_range(0.0..=(ch - sy));
            PasteRegion { sx, sy, ox, oy }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::grammar::serialize_class;
    use crate::schema::Vocabulary;

    fn cfg() -> GenConfig {
        GenConfig::default()
    }

    #[test]
    fn ocr_doc_is_deterministic() {
        let a = gen_ocr_doc(5, &cfg()).unwrap();
        let b = gen_ocr_doc(5, &cfg()).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.words.len(), b.words.len());
        for ((ta, qa), (tb, qb)) in a.words.iter().zip(&b.words) {
            assert_eq!(ta, tb);
            assert_eq!(qa.points, qb.points);
        }
        let c = gen_ocr_doc(6, &cfg()).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn ocr_word_ink_is_contained_in_its_quad() {
        let (doc, placed) = gen_ocr_doc_detailed(1, &cfg()).unwrap();
        assert!(!placed.is_empty());
        for pw in &placed {
            let mut lone = Image::blank(doc.image.width(), doc.image.height());
            raster::draw_word(&mut lone, &GlyphFont::new(), &pw.text, &pw.placement);
            let quad = raster::word_quad(
                &pw.text,
                &pw.placement,
                doc.image.width(),
                doc.image.height(),
            )
            .unwrap();
            let ink = lone.ink_pixels();
            assert!(!ink.is_empty(), "word {:?} rendered no ink", pw.text);
            for (x, y) in ink {
                let cx = (x as f64 + 0.5) / doc.image.width() as f64;
                let cy = (y as f64 + 0.5) / doc.image.height() as f64;
                assert!(quad.contains_point(cx, cy), "{:?} leaked ink", pw.text);
            }
        }
    }

    #[test]
    fn zero_rotation_gives_axis_aligned_quads() {
        let mut c = cfg();
        c.rotation_max_deg = 0.0;
        let doc = gen_ocr_doc(3, &c).unwrap();
        assert!(!doc.words.is_empty());
        for (text, quad) in &doc.words {
            assert!(quad.is_axis_aligned(1e-12), "{text} quad not aligned");
        }
    }

    #[test]
    fn ocr_words_are_sorted_reading_order() {
        let doc = gen_ocr_doc(9, &cfg()).unwrap();
        for pair in doc.words.windows(2) {
            let a = pair[0].1.envelope();
            let b = pair[1].1.envelope();
            assert!(reading_order(&a, &b) != std::cmp::Ordering::Greater);
        }
    }

    #[test]
    fn quads_stay_normalized() {
        for seed in 0..20 {
            let doc = gen_ocr_doc(seed, &cfg()).unwrap();
            for (_, q) in &doc.words {
                assert!(q.points.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn undersized_image_is_rejected() {
        let mut c = cfg();
        c.width = 48;
        assert!(matches!(
            gen_ocr_doc(1, &c),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn parse_doc_leaves_all_appear_in_words() {
        let schema = Schema::default();
        for seed in [7, 8, 9, 100] {
            let doc = gen_parse_doc(seed, &cfg(), &schema).unwrap();
            let tree = doc.parse.as_ref().unwrap();
            let mut available: Vec<&str> = doc.words.iter().map(|(t, _)| t.as_str()).collect();
            for (_, segment) in tree.leaf_entries() {
                let idx = available
                    .iter()
                    .position(|w| *w == segment)
                    .unwrap_or_else(|| panic!("segment {segment:?} missing from words"));
                available.remove(idx);
            }
        }
    }

    #[test]
    fn parse_doc_has_distractor_words() {
        let schema = Schema::default();
        let doc = gen_parse_doc(7, &cfg(), &schema).unwrap();
        let tree = doc.parse.as_ref().unwrap();
        let leaves: Vec<String> = tree.leaf_entries().into_iter().map(|(_, s)| s).collect();
        let distractors: Vec<&str> = doc
            .words
            .iter()
            .map(|(t, _)| t.as_str())
            .filter(|t| !leaves.iter().any(|l| l == t))
            .collect();
        assert!(!distractors.is_empty());
        assert!(distractors.contains(&"total"));
    }

    #[test]
    fn parse_doc_prices_sum_to_total() {
        let schema = Schema::default();
        for seed in 0..10 {
            let doc = gen_parse_doc(seed, &cfg(), &schema).unwrap();
            let tree = doc.parse.unwrap();
            let mut item_sum = 0u64;
            let mut total = None;
            for (path, segment) in tree.leaf_entries() {
                if path == "menu.price" {
                    item_sum += parse_cents(&segment).unwrap();
                } else if path == "total" {
                    total = Some(parse_cents(&segment).unwrap());
                }
            }
            assert_eq!(Some(item_sum), total);
        }
    }

    #[test]
    fn parse_doc_is_deterministic() {
        let schema = Schema::default();
        let a = gen_parse_doc(42, &cfg(), &schema).unwrap();
        let b = gen_parse_doc(42, &cfg(), &schema).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.parse, b.parse);
    }

    #[test]
    fn layout_doc_boxes_are_disjoint() {
        for seed in 0..10 {
            let doc = gen_layout_doc(seed, &cfg()).unwrap();
            let elements = doc.layout.unwrap();
            assert!(!elements.is_empty());
            for i in 0..elements.len() {
                for j in i + 1..elements.len() {
                    assert_eq!(
                        elements[i].1.intersection_area(&elements[j].1),
                        0.0,
                        "blocks {i} and {j} overlap at seed {seed}"
                    );
                }
            }
        }
    }

    #[test]
    fn class_doc_label_round_trips() {
        let vocab = Vocabulary::build(&Schema::default()).unwrap();
        for seed in 0..8 {
            let doc = gen_class_doc(seed, &cfg()).unwrap();
            let label = doc.label.unwrap();
            serialize_class(&label, &vocab).unwrap();
            assert!(!doc.words.is_empty());
        }
    }

    #[test]
    fn scene_doc_respects_object_count_bounds() {
        let mut zero = cfg();
        zero.min_objects = 0;
        zero.max_objects = 0;
        let doc = gen_scene_doc(4, &zero).unwrap();
        assert!(doc.layout.unwrap().is_empty());

        let doc = gen_scene_doc(4, &cfg()).unwrap();
        let objects = doc.layout.unwrap();
        assert!((1..=3).contains(&objects.len()));
        for (cat, _) in &objects {
            assert!(["circle", "square", "triangle"].contains(&cat.as_str()));
        }
    }

    #[test]
    fn single_doc_composition_is_identity() {
        let schema = Schema::default();
        let doc = gen_parse_doc(11, &cfg(), &schema).unwrap();
        let (multi, regions) = compose_multidoc_detailed(std::slice::from_ref(&doc), 1, &cfg()).unwrap();
        assert_eq!(regions.len(), 1);
        assert_eq!(
            regions[0],
            PasteRegion {
                sx: 1.0,
                sy: 1.0,
                ox: 0.0,
                oy: 0.0
            }
        );
        assert_eq!(multi.image, doc.image);
        for ((_, qa), (_, qb)) in multi.words.iter().zip(&doc.words) {
            assert_eq!(qa.points, qb.points);
        }
        assert_eq!(multi.parses.as_ref().unwrap().len(), 1);
        assert_eq!(multi.parses.unwrap()[0], doc.parse.unwrap());
    }

    #[test]
    fn two_doc_regions_are_disjoint() {
        let schema = Schema::default();
        let docs = vec![
            gen_parse_doc(1, &cfg(), &schema).unwrap(),
            gen_parse_doc(2, &cfg(), &schema).unwrap(),
        ];
        let (_, regions) = compose_multidoc_detailed(&docs, 5, &cfg()).unwrap();
        assert_eq!(regions.len(), 2);
        assert_eq!(regions[0].bbox().intersection_area(&regions[1].bbox()), 0.0);
    }

    #[test]
    fn paste_affine_matches_manual_map() {
        let schema = Schema::default();
        let doc = gen_parse_doc(3, &cfg(), &schema).unwrap();
        let region = PasteRegion {
            sx: 0.5,
            sy: 0.5,
            ox: 0.5,
            oy: 0.0,
        };
        for (_, quad) in &doc.words {
            let moved = quad.affine(region.sx, region.sy, region.ox, region.oy);
            for i in 0..4 {
                assert!((moved.points[2 * i] - (0.5 * quad.points[2 * i] + 0.5)).abs() < 1e-12);
                assert!((moved.points[2 * i + 1] - 0.5 * quad.points[2 * i + 1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oversized_composition_is_rejected() {
        let schema = Schema::default();
        let doc = gen_parse_doc(1, &cfg(), &schema).unwrap();
        let docs = vec![doc.clone(), doc.clone(), doc.clone(), doc.clone(), doc];
        assert!(matches!(
            compose_multidoc(&docs, 1, &cfg()),
            Err(Error::Argument(_))
        ));
        let ocr = gen_ocr_doc(1, &cfg()).unwrap();
        assert!(matches!(
            compose_multidoc(&[ocr], 1, &cfg()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn four_doc_composition_covers_grid() {
        let schema = Schema::default();
        let docs: Vec<SynthDoc> = (0..4)
            .map(|s| gen_parse_doc(s, &cfg(), &schema).unwrap())
            .collect();
        let (multi, regions) = compose_multidoc_detailed(&docs, 9, &cfg()).unwrap();
        assert_eq!(regions.len(), 4);
        for i in 0..4 {
            for j in i + 1..4 {
                assert_eq!(
                    regions[i].bbox().intersection_area(&regions[j].bbox()),
                    0.0
                );
            }
        }
        assert_eq!(multi.parses.unwrap().len(), 4);
        let total_words: usize = docs.iter().map(|d| d.words.len()).sum();
        assert_eq!(multi.words.len(), total_words);
    }
}
