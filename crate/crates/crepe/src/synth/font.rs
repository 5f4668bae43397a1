//! Built-in 5x7 bitmap font covering the whole charset.
//!
//! Letter glyphs use upright capital forms; the vocabulary folds case, so
//! one shape per letter is enough. Space is the empty bitmap.

use std::collections::HashMap;

use crate::schema::CHARSET;

/// Rows are bitmasks with bit `col` set when the pixel at that column is
/// inked; column 0 is leftmost.
#[derive(Clone, Debug)]
pub struct GlyphFont {
    bitmaps: HashMap<char, [u8; 7]>,
}

pub const GLYPH_COLS: usize = 5;
pub const GLYPH_ROWS: usize = 7;
/// Horizontal advance between glyph origins, leaving a one-column gap.
pub const GLYPH_ADVANCE: usize = 6;

impl GlyphFont {
    pub fn new() -> GlyphFont {
        let mut bitmaps = HashMap::new();
        for (c, pattern) in GLYPHS {
            bitmaps.insert(*c, rows_from_pattern(pattern));
        }
        bitmaps.insert(' ', [0u8; 7]);
        let font = GlyphFont { bitmaps };
        debug_assert!(CHARSET.chars().all(|c| font.bitmaps.contains_key(&c)));
        font
    }

    pub fn bitmap(&self, c: char) -> Option<&[u8; 7]> {
        self.bitmaps.get(&c)
    }

    pub fn is_lit(&self, c: char, row: usize, col: usize) -> bool {
        if row >= GLYPH_ROWS || col >= GLYPH_COLS {
            return false;
        }
        self.bitmaps
            .get(&c)
            .map(|rows| rows[row] >> col & 1 == 1)
            .unwrap_or(false)
    }
}

impl Default for GlyphFont {
    fn default() -> Self {
        GlyphFont::new()
    }
}

fn rows_from_pattern(pattern: &[&str; 7]) -> [u8; 7] {
    let mut rows = [0u8; 7];
    for (r, line) in pattern.iter().enumerate() {
        assert_eq!(line.len(), GLYPH_COLS, "glyph row must be 5 wide");
        for (c, ch) in line.bytes().enumerate() {
            match ch {
                b'#' => rows[r] |= 1 << c,
                b'.' => {}
                _ => panic!("glyph rows use only '#' and '.'"),
            }
        }
    }
    rows
}

#[rustfmt::skip]
const GLYPHS: &[(char, [&str; 7])] = &[
    ('a', [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"]),
    ('b', ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."]),
    ('c', [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."]),
    ('d', ["####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."]),
    ('e', ["#####", "#....", "#....", "####.", "#....", "#....", "#####"]),
    ('f', ["#####", "#....", "#....", "####.", "#....", "#....", "#...."]),
    ('g', [".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"]),
    ('h', ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"]),
    ('i', [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('j', ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."]),
    ('k', ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"]),
    ('l', ["#....", "#....", "#....", "#....", "#....", "#....", "#####"]),
    ('m', ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"]),
    ('n', ["#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"]),
    ('o', [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."]),
    ('p', ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."]),
    ('q', [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"]),
    ('r', ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"]),
    ('s', [".####", "#....", "#....", ".###.", "....#", "....#", "####."]),
    ('t', ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."]),
    ('u', ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."]),
    ('v', ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."]),
    ('w', ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"]),
    ('x', ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"]),
    ('y', ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."]),
    ('z', ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"]),
    ('0', [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."]),
    ('1', ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('2', [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"]),
    ('3', ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."]),
    ('4', ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."]),
    ('5', ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."]),
    ('6', ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."]),
    ('7', ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."]),
    ('8', [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."]),
    ('9', [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."]),
    ('.', [".....", ".....", ".....", ".....", ".....", ".##..", ".##.."]),
    (',', [".....", ".....", ".....", ".....", ".##..", "..#..", ".#..."]),
    (':', [".....", ".##..", ".##..", ".....", ".##..", ".##..", "....."]),
    (';', [".....", ".##..", ".##..", ".....", ".##..", "..#..", ".#..."]),
    ('-', [".....", ".....", ".....", "#####", ".....", ".....", "....."]),
    ('/', ["....#", "...#.", "...#.", "..#..", ".#...", ".#...", "#...."]),
    ('(', ["...#.", "..#..", ".#...", ".#...", ".#...", "..#..", "...#."]),
    (')', [".#...", "..#..", "...#.", "...#.", "...#.", "..#..", ".#..."]),
    ('%', ["##..#", "##..#", "...#.", "..#..", ".#...", "#..##", "#..##"]),
    ('$', ["..#..", ".####", "#.#..", ".###.", "..#.#", "####.", "..#.."]),
    ('#', [".#.#.", ".#.#.", "#####", ".#.#.", "#####", ".#.#.", ".#.#."]),
    ('&', [".##..", "#..#.", "#.#..", ".#...", "#.#.#", "#..#.", ".##.#"]),
    ('*', [".....", "..#..", "#.#.#", ".###.", "#.#.#", "..#..", "....."]),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_charset_character_has_a_bitmap() {
        let font = GlyphFont::new();
        for c in CHARSET.chars() {
            assert!(font.bitmap(c).is_some(), "missing glyph for {c:?}");
        }
    }

    #[test]
    fn space_is_the_empty_bitmap() {
        let font = GlyphFont::new();
        assert_eq!(font.bitmap(' '), Some(&[0u8; 7]));
    }

    #[test]
    fn non_space_glyphs_are_inked_and_distinct() {
        let font = GlyphFont::new();
        let mut seen = Vec::new();
        for c in CHARSET.chars().filter(|&c| c != ' ') {
            let rows = *font.bitmap(c).unwrap();
            assert!(rows.iter().any(|&r| r != 0), "blank glyph for {c:?}");
            assert!(!seen.contains(&rows), "duplicate glyph shape for {c:?}");
            seen.push(rows);
        }
    }

    #[test]
    fn is_lit_matches_bitmap_bits() {
        let font = GlyphFont::new();
        assert!(font.is_lit('l', 0, 0));
        assert!(!font.is_lit('l', 0, 4));
        assert!(font.is_lit('l', 6, 4));
        assert!(!font.is_lit('l', 7, 0));
        assert!(!font.is_lit('@', 0, 0));
    }

    #[test]
    fn glyph_table_covers_charset_minus_space() {
        assert_eq!(GLYPHS.len(), CHARSET.len() - 1);
    }
}
