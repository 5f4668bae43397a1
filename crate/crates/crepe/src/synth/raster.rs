//! Grayscale raster plus inverse-mapped drawing primitives.
//!
//! Words are drawn by scanning destination pixels and mapping each pixel
//! center back into glyph space. Inked pixel centers therefore lie inside
//! the word rectangle by construction, and the word quad is that rectangle
//! (padded) pushed through the same affine map, which guarantees the
//! containment invariant exactly.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::Quad;
use crate::synth::font::{GlyphFont, GLYPH_ADVANCE, GLYPH_COLS, GLYPH_ROWS};

pub const INK: u8 = 0;
pub const BACKGROUND: u8 = 255;
/// Values below this count as glyph ink; speckle noise stays above it.
pub const INK_THRESHOLD: u8 = 128;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn filled(width: usize, height: usize, value: u8) -> Image {
        Image {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn blank(width: usize, height: usize) -> Image {
        Image::filled(width, height, BACKGROUND)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Pixel coordinates of glyph ink, in row-major order.
    pub fn ink_pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) < INK_THRESHOLD {
                    out.push((x, y));
                }
            }
        }
        out
    }

    /// Pixel values scaled to [0,1] for the encoder.
    pub fn to_f01(&self) -> Vec<f32> {
        self.data.iter().map(|&v| f32::from(v) / 255.0).collect()
    }
}

/// Placement of one word: pixel-space origin of the word rectangle's
/// top-left glyph cell, glyph pixel scale, and rotation in radians.
#[derive(Clone, Copy, Debug)]
pub struct WordPlacement {
    pub x: f64,
    pub y: f64,
    pub scale: f64,
    pub angle: f64,
}

/// Word rectangle size in glyph-space units.
pub fn word_extent(text: &str) -> (f64, f64) {
    let n = text.chars().count().max(1);
    (
        (n * GLYPH_ADVANCE - (GLYPH_ADVANCE - GLYPH_COLS)) as f64,
        GLYPH_ROWS as f64,
    )
}

/// Padding around the word rectangle in glyph-space units; keeps inked
/// pixel centers strictly interior to the quad.
const QUAD_PAD: f64 = 0.75;

fn forward(p: &WordPlacement, u: f64, v: f64) -> (f64, f64) {
    let (sin, cos) = p.angle.sin_cos();
    (
        p.x + p.scale * (cos * u - sin * v),
        p.y + p.scale * (sin * u + cos * v),
    )
}

/// Normalized quad of a placed word, clockwise from the top-left corner.
pub fn word_quad(text: &str, p: &WordPlacement, width: usize, height: usize) -> Result<Quad> {
    let (cols, rows) = word_extent(text);
    let corners = [
        (-QUAD_PAD, -QUAD_PAD),
        (cols + QUAD_PAD, -QUAD_PAD),
        (cols + QUAD_PAD, rows + QUAD_PAD),
        (-QUAD_PAD, rows + QUAD_PAD),
    ];
    let mut points = [0.0; 8];
    for (i, (u, v)) in corners.into_iter().enumerate() {
        let (x, y) = forward(p, u, v);
        points[2 * i] = x / width as f64;
        points[2 * i + 1] = y / height as f64;
    }
    Quad::new(points)
}

/// Rasterizes a word by inverse mapping each candidate pixel center into
/// glyph space.
pub fn draw_word(img: &mut Image, font: &GlyphFont, text: &str, p: &WordPlacement) {
    if p.scale <= 0.0 {
        return;
    }
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return;
    }
    let (cols, rows) = word_extent(text);
    let corner_px = [
        forward(p, -QUAD_PAD, -QUAD_PAD),
        forward(p, cols + QUAD_PAD, -QUAD_PAD),
        forward(p, cols + QUAD_PAD, rows + QUAD_PAD),
        forward(p, -QUAD_PAD, rows + QUAD_PAD),
    ];
    let x_lo = corner_px.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let x_hi = corner_px.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let y_lo = corner_px.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let y_hi = corner_px.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let px_lo = x_lo.floor().max(0.0) as usize;
    let px_hi = (x_hi.ceil() as usize).min(img.width.saturating_sub(1));
    let py_lo = y_lo.floor().max(0.0) as usize;
    let py_hi = (y_hi.ceil() as usize).min(img.height.saturating_sub(1));
    let (sin, cos) = p.angle.sin_cos();

    for py in py_lo..=py_hi {
        for px in px_lo..=px_hi {
            let dx = (px as f64 + 0.5 - p.x) / p.scale;
            let dy = (py as f64 + 0.5 - p.y) / p.scale;
            let u = cos * dx + sin * dy;
            let v = -sin * dx + cos * dy;
            if u < 0.0 || u >= cols || v < 0.0 || v >= rows {
                continue;
            }
            let cell = (u / GLYPH_ADVANCE as f64).floor() as usize;
            let cu = u - (cell * GLYPH_ADVANCE) as f64;
            if cell >= chars.len() || cu >= GLYPH_COLS as f64 {
                continue;
            }
            if font.is_lit(chars[cell], v.floor() as usize, cu.floor() as usize) {
                img.set(px, py, INK);
            }
        }
    }
}

/// Light-gray speckle; stays above [`INK_THRESHOLD`] so ink scans ignore it.
pub fn speckle(img: &mut Image, rng: &mut impl Rng, density: f64) {
    for y in 0..img.height {
        for x in 0..img.width {
            if rng.random_bool(density.clamp(0.0, 1.0)) {
                let shade = rng.random_range(170..=220);
                if img.get(x, y) == BACKGROUND {
                    img.set(x, y, shade);
                }
            }
        }
    }
}

pub fn fill_rect(img: &mut Image, x0: usize, y0: usize, x1: usize, y1: usize, value: u8) {
    for y in y0..y1.min(img.height) {
        for x in x0..x1.min(img.width) {
            img.set(x, y, value);
        }
    }
}

pub fn fill_circle(img: &mut Image, cx: f64, cy: f64, r: f64, value: u8) {
    let x0 = ((cx - r).floor().max(0.0)) as usize;
    let y0 = ((cy - r).floor().max(0.0)) as usize;
    let x1 = (((cx + r).ceil() as usize) + 1).min(img.width);
    let y1 = (((cy + r).ceil() as usize) + 1).min(img.height);
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            if dx * dx + dy * dy <= r * r {
                img.set(x, y, value);
            }
        }
    }
}

/// Upward-pointing triangle inscribed in the given pixel rectangle.
pub fn fill_triangle(img: &mut Image, x0: usize, y0: usize, x1: usize, y1: usize, value: u8) {
    if x1 <= x0 || y1 <= y0 {
        return;
    }
    let apex_x = (x0 + x1) as f64 / 2.0;
    let h = (y1 - y0) as f64;
    for y in y0..y1.min(img.height) {
        // Width grows linearly from apex (top) to base (bottom).
        let t = (y as f64 + 0.5 - y0 as f64) / h;
        let half = t * (x1 - x0) as f64 / 2.0;
        let xa = (apex_x - half).floor().max(x0 as f64) as usize;
        let xb = ((apex_x + half).ceil() as usize).min(x1);
        for x in xa..xb.min(img.width) {
            img.set(x, y, value);
        }
    }
}

/// Scales `src` into the destination rectangle by bilinear sampling; ink
/// wins over existing content so overlapping pastes never erase.
pub fn paste_scaled(
    dst: &mut Image,
    src: &Image,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
) -> Result<()> {
    if w == 0 || h == 0 {
        return Err(Error::Dimension("paste region is empty".to_string()));
    }
    if x0 + w > dst.width || y0 + h > dst.height {
        return Err(Error::Dimension(format!(
            "paste region {x0},{y0} {w}x{h} exceeds canvas {}x{}",
            dst.width, dst.height
        )));
    }
    for dy in 0..h {
        for dx in 0..w {
            let sx = (dx as f64 + 0.5) / w as f64 * src.width as f64 - 0.5;
            let sy = (dy as f64 + 0.5) / h as f64 * src.height as f64 - 0.5;
            let v = bilinear(src, sx, sy);
            let px = x0 + dx;
            let py = y0 + dy;
            if v < dst.get(px, py) {
                dst.set(px, py, v);
            }
        }
    }
    Ok(())
}

fn bilinear(img: &Image, x: f64, y: f64) -> u8 {
    let xc = x.clamp(0.0, (img.width - 1) as f64);
    let yc = y.clamp(0.0, (img.height - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let top = f64::from(img.get(x0, y0)) * (1.0 - fx) + f64::from(img.get(x1, y0)) * fx;
    let bot = f64::from(img.get(x0, y1)) * (1.0 - fx) + f64::from(img.get(x1, y1)) * fx;
    (top * (1.0 - fy) + bot * fy).round() as u8
}
