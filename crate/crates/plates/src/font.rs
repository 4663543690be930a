//! Embedded 5×7 bitmap font for `A–Z` and `0–9`.
//!
//! Every glyph spans all seven rows and its ink columns are contiguous, so a
//! rendered glyph never splits into two column-projection segments.

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;

pub const CHARSET: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

/// Rows top to bottom, bit 4 = leftmost column.
const GLYPHS: [(char, [u8; GLYPH_H]); 36] = [
    ('A', [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001]),
    ('B', [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110]),
    ('C', [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110]),
    ('D', [0b11100, 0b10010, 0b10001, 0b10001, 0b10001, 0b10010, 0b11100]),
    ('E', [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111]),
    ('F', [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000]),
    ('G', [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111]),
    ('H', [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001]),
    ('I', [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('J', [0b00111, 0b00010, 0b00010, 0b00010, 0b10010, 0b10010, 0b01100]),
    ('K', [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001]),
    ('L', [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111]),
    ('M', [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001]),
    ('N', [0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001]),
    ('O', [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110]),
    ('P', [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000]),
    ('Q', [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101]),
    ('R', [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001]),
    ('S', [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110]),
    ('T', [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100]),
    ('U', [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110]),
    ('V', [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100]),
    ('W', [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010]),
    ('X', [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001]),
    ('Y', [0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100]),
    ('Z', [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111]),
    ('0', [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110]),
    ('1', [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('2', [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111]),
    ('3', [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110]),
    ('4', [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010]),
    ('5', [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110]),
    ('6', [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110]),
    ('7', [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000]),
    ('8', [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110]),
    ('9', [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100]),
];

/// Decoration icons, drawn with the same bit layout.
const ICONS: [[u8; GLYPH_H]; 3] = [
    [0b01110, 0b11111, 0b11111, 0b11111, 0b11111, 0b11111, 0b01110],
    [0b00100, 0b00100, 0b11111, 0b01110, 0b01110, 0b11011, 0b10001],
    [0b11111, 0b10001, 0b10101, 0b10101, 0b10101, 0b10001, 0b11111],
];

pub const ICON_COUNT: usize = ICONS.len();

/// A glyph bitmap, `bitmap[row][col]`.
pub type Bitmap = [[bool; GLYPH_W]; GLYPH_H];

fn expand(rows: &[u8; GLYPH_H]) -> Bitmap {
    let mut out = [[false; GLYPH_W]; GLYPH_H];
    for (r, bits) in rows.iter().enumerate() {
        for (c, cell) in out[r].iter_mut().enumerate() {
            *cell = bits & (1 << (GLYPH_W - 1 - c)) != 0;
        }
    }
    out
}

pub fn glyph(ch: char) -> Option<Bitmap> {
    GLYPHS.iter().find(|(c, _)| *c == ch).map(|(_, rows)| expand(rows))
}

pub fn icon(id: usize) -> Option<Bitmap> {
    ICONS.get(id).map(expand)
}

pub fn glyphs() -> impl Iterator<Item = (char, Bitmap)> {
    GLYPHS.iter().map(|(c, rows)| (*c, expand(rows)))
}

/// First and last columns holding ink.
pub fn ink_columns(bitmap: &Bitmap) -> (usize, usize) {
    let has_ink = |c: usize| bitmap.iter().any(|row| row[c]);
    let first = (0..GLYPH_W).find(|&c| has_ink(c)).unwrap_or(0);
    let last = (0..GLYPH_W).rev().find(|&c| has_ink(c)).unwrap_or(0);
    (first, last)
}
