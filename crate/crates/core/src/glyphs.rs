//! Bundled bitmap font used both to render scale labels and as the template
//! set of the built-in recognizer.
//!
//! Every glyph lives in a 5x9 cell: rows 0..7 hold digits and ascenders,
//! lowercase x-height letters occupy rows 2..7 and descenders reach row 8.
//! Glyphs are placed by their ink columns followed by a one-column gap, so
//! neighbouring glyphs are always separated by at least one empty column.

use crate::imaging::ImagingError;

pub const CELL_WIDTH: u32 = 5;
pub const CELL_HEIGHT: u32 = 9;
/// Empty columns after each glyph.
pub const GLYPH_GAP: u32 = 1;
/// Advance of the space character, excluding the gaps around it.
pub const SPACE_ADVANCE: u32 = 2;
/// Height of digits in cell rows.
pub const DIGIT_HEIGHT: u32 = 7;

/// Characters the scale-label recognizer can emit (besides space).
pub const SCALE_CHARSET: &str = "0123456789.cmµunp";

const FONT: &[(char, [&str; 9])] = &[
    ('0', [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###.", ".....", "....."]),
    ('1', ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###.", ".....", "....."]),
    ('2', [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####", ".....", "....."]),
    ('3', ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###.", ".....", "....."]),
    ('4', ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#.", ".....", "....."]),
    ('5', ["#####", "#....", "####.", "....#", "....#", "#...#", ".###.", ".....", "....."]),
    ('6', ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###.", ".....", "....."]),
    ('7', ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#...", ".....", "....."]),
    ('8', [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###.", ".....", "....."]),
    ('9', [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##..", ".....", "....."]),
    ('.', [".....", ".....", ".....", ".....", ".....", "##...", "##...", ".....", "....."]),
    ('a', [".....", ".....", ".###.", "....#", ".####", "#...#", ".####", ".....", "....."]),
    ('b', ["#....", "#....", "#.##.", "##..#", "#...#", "#...#", "####.", ".....", "....."]),
    ('c', [".....", ".....", ".###.", "#....", "#....", "#...#", ".###.", ".....", "....."]),
    ('d', ["....#", "....#", ".##.#", "#..##", "#...#", "#...#", ".####", ".....", "....."]),
    ('e', [".....", ".....", ".###.", "#...#", "#####", "#....", ".###.", ".....", "....."]),
    ('f', ["..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#...", ".....", "....."]),
    ('g', [".....", ".....", ".####", "#...#", "#...#", ".####", "....#", "#...#", ".###."]),
    ('h', ["#....", "#....", "#.##.", "##..#", "#...#", "#...#", "#...#", ".....", "....."]),
    ('i', ["..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###.", ".....", "....."]),
    ('j', ["...#.", ".....", "..##.", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."]),
    ('k', ["#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#.", ".....", "....."]),
    ('l', [".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###.", ".....", "....."]),
    ('m', [".....", ".....", "##.#.", "#.#.#", "#.#.#", "#...#", "#...#", ".....", "....."]),
    ('n', [".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#", ".....", "....."]),
    ('o', [".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###.", ".....", "....."]),
    ('p', [".....", ".....", "####.", "#...#", "#...#", "#...#", "####.", "#....", "#...."]),
    ('q', [".....", ".....", ".####", "#...#", "#...#", "#...#", ".####", "....#", "....#"]),
    ('r', [".....", ".....", "#.##.", "##..#", "#....", "#....", "#....", ".....", "....."]),
    ('s', [".....", ".....", ".####", "#....", ".###.", "....#", "####.", ".....", "....."]),
    ('t', [".#...", ".#...", "####.", ".#...", ".#...", ".#..#", "..##.", ".....", "....."]),
    ('u', [".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#", ".....", "....."]),
    ('µ', [".....", ".....", "#...#", "#...#", "#...#", "#..##", "###.#", "#....", "#...."]),
    ('v', [".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#..", ".....", "....."]),
    ('w', [".....", ".....", "#...#", "#...#", "#.#.#", "#.#.#", ".#.#.", ".....", "....."]),
    ('x', [".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", ".....", "....."]),
    ('y', [".....", ".....", "#...#", "#...#", "#...#", ".####", "....#", "#...#", ".###."]),
    ('z', [".....", ".....", "#####", "...#.", "..#..", ".#...", "#####", ".....", "....."]),
];

/// One atlas entry cropped to its ink columns; rows always span the full cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glyph {
    pub ch: char,
    /// Ink width in cell columns.
    pub width: u32,
    /// Row-major, `width * CELL_HEIGHT` entries.
    pub bits: Vec<bool>,
}

impl Glyph {
    pub fn get(&self, col: u32, row: u32) -> bool {
        self.bits[(row * self.width + col) as usize]
    }

    /// First and last inked rows.
    pub fn row_span(&self) -> (u32, u32) {
        let rows: Vec<u32> = (0..CELL_HEIGHT)
            .filter(|&r| (0..self.width).any(|c| self.get(c, r)))
            .collect();
        (rows[0], *rows.last().unwrap())
    }
}

fn parse_glyph(ch: char, rows: &[&str; 9]) -> Glyph {
    let inked: Vec<u32> = (0..CELL_WIDTH)
        .filter(|&c| rows.iter().any(|r| r.as_bytes()[c as usize] == b'#'))
        .collect();
    let (first, last) = (inked[0], *inked.last().unwrap());
    let width = last - first + 1;
    let mut bits = Vec::with_capacity((width * CELL_HEIGHT) as usize);
    for r in rows {
        for c in first..=last {
            bits.push(r.as_bytes()[c as usize] == b'#');
        }
    }
    Glyph { ch, width, bits }
}

/// Normalizes the Greek small mu to the micro sign used by the atlas.
pub fn canonical_char(ch: char) -> char {
    if ch == '\u{03bc}' {
        'µ'
    } else {
        ch
    }
}

pub fn glyph(ch: char) -> Option<Glyph> {
    let ch = canonical_char(ch);
    FONT.iter().find(|(c, _)| *c == ch).map(|(c, rows)| parse_glyph(*c, rows))
}

pub fn supports(ch: char) -> bool {
    ch == ' ' || glyph(ch).is_some()
}

/// Templates for the recognizer, in charset order.
pub fn scale_templates() -> Vec<Glyph> {
    SCALE_CHARSET.chars().map(|c| glyph(c).expect("charset glyph exists")).collect()
}

/// Rendered text as a cell-aligned ink bitmap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextBitmap {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl TextBitmap {
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn ink_points(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.height)
            .flat_map(move |y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.get(x, y))
    }
}

/// Advance width, in cell columns, of `text` without the trailing gap.
pub fn text_columns(text: &str) -> Result<u32, ImagingError> {
    let mut cols = 0u32;
    for ch in text.chars() {
        cols += if ch == ' ' {
            SPACE_ADVANCE + GLYPH_GAP
        } else {
            glyph(ch).ok_or(ImagingError::UnsupportedGlyph(ch))?.width + GLYPH_GAP
        };
    }
    Ok(cols.saturating_sub(GLYPH_GAP))
}

/// Renders `text` at an integer `scale`. The bitmap is `9 * scale` rows tall;
/// row 0 is the top of the digit cap height.
pub fn render_text(text: &str, scale: u32) -> Result<TextBitmap, ImagingError> {
    let scale = scale.max(1);
    let cols = text_columns(text)?.max(1);
    let width = cols * scale;
    let height = CELL_HEIGHT * scale;
    let mut bits = vec![false; (width * height) as usize];
    let mut pen = 0u32;
    for ch in text.chars() {
        if ch == ' ' {
            pen += SPACE_ADVANCE + GLYPH_GAP;
            continue;
        }
        let g = glyph(ch).ok_or(ImagingError::UnsupportedGlyph(ch))?;
        for row in 0..CELL_HEIGHT {
            for col in 0..g.width {
                if !g.get(col, row) {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let x = (pen + col) * scale + dx;
                        let y = row * scale + dy;
                        bits[(y * width + x) as usize] = true;
                    }
                }
            }
        }
        pen += g.width + GLYPH_GAP;
    }
    Ok(TextBitmap { width, height, bits })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_glyph_has_ink_and_no_empty_inner_column() {
        for (ch, rows) in FONT {
            let g = parse_glyph(*ch, rows);
            assert!(g.width >= 1, "{ch}");
            for c in 0..g.width {
                assert!((0..CELL_HEIGHT).any(|r| g.get(c, r)), "glyph {ch} has an empty column {c}");
            }
        }
    }

    #[test]
    fn templates_are_pairwise_distinct() {
        let t = scale_templates();
        for i in 0..t.len() {
            for j in i + 1..t.len() {
                assert!(t[i].width != t[j].width || t[i].bits != t[j].bits, "{} vs {}", t[i].ch, t[j].ch);
            }
        }
    }

    #[test]
    fn micro_and_u_differ_only_below_baseline() {
        let mu = glyph('µ').unwrap();
        let u = glyph('u').unwrap();
        assert_ne!(mu.bits, u.bits);
        assert_eq!(glyph('\u{03bc}').unwrap(), mu);
        assert_eq!(mu.row_span(), (2, 8));
        assert_eq!(u.row_span(), (2, 6));
    }

    #[test]
    fn glyphs_are_separated_by_a_gap_column() {
        let bmp = render_text("10", 1).unwrap();
        // '1' is 3 columns wide, then one empty column, then '0'.
        assert_eq!(bmp.width, 3 + 1 + 5);
        assert!((0..bmp.height).all(|y| !bmp.get(3, y)));
    }

    #[test]
    fn unsupported_character() {
        assert!(matches!(render_text("5 Å", 1), Err(ImagingError::UnsupportedGlyph('Å'))));
    }

    #[test]
    fn scale_multiplies_dimensions() {
        let a = render_text("500 mm", 1).unwrap();
        let b = render_text("500 mm", 3).unwrap();
        assert_eq!((b.width, b.height), (a.width * 3, a.height * 3));
        assert_eq!(b.ink_points().count(), a.ink_points().count() * 9);
    }
}
