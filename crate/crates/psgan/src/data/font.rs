//! 5x7 bitmap font (A-Z, 0-9) and the integer-scale text layout shared by
//! the synthetic renderer and the template recognizer.

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;
/// Horizontal advance: glyph width plus one column of spacing.
pub const ADVANCE: usize = GLYPH_W + 1;
pub const CHARSET: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

#[rustfmt::skip]
const GLYPHS: [(char, [&str; 7]); 36] = [
    ('A', [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"]),
    ('B', ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."]),
    ('C', [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."]),
    ('D', ["####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."]),
    ('E', ["#####", "#....", "#....", "####.", "#....", "#....", "#####"]),
    ('F', ["#####", "#....", "#....", "####.", "#....", "#....", "#...."]),
    ('G', [".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".###."]),
    ('H', ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"]),
    ('I', [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('J', ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."]),
    ('K', ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"]),
    ('L', ["#....", "#....", "#....", "#....", "#....", "#....", "#####"]),
    ('M', ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"]),
    ('N', ["#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"]),
    ('O', [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."]),
    ('P', ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."]),
    ('Q', [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"]),
    ('R', ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"]),
    ('S', [".###.", "#...#", "#....", ".###.", "....#", "#...#", ".###."]),
    ('T', ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."]),
    ('U', ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."]),
    ('V', ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."]),
    ('W', ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"]),
    ('X', ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"]),
    ('Y', ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."]),
    ('Z', ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"]),
    ('0', [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."]),
    ('1', ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('2', [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"]),
    ('3', [".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."]),
    ('4', ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."]),
    ('5', ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."]),
    ('6', [".###.", "#....", "#....", "####.", "#...#", "#...#", ".###."]),
    ('7', ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."]),
    ('8', [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."]),
    ('9', [".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."]),
];

/// Glyph rows for a supported character (case-insensitive letters).
pub fn glyph(c: char) -> Option<&'static [&'static str; 7]> {
    let c = c.to_ascii_uppercase();
    GLYPHS.iter().find(|(g, _)| *g == c).map(|(_, rows)| rows)
}

pub fn supports(text: &str) -> bool {
    !text.is_empty() && text.chars().all(|c| glyph(c).is_some())
}

/// Row-major 0/1 bitmap of a string: `6n-1` wide, 7 tall.
pub fn render_text(text: &str) -> Option<(usize, usize, Vec<u8>)> {
    if text.is_empty() {
        return None;
    }
    let n = text.chars().count();
    let w = ADVANCE * n - 1;
    let mut bits = vec![0u8; w * GLYPH_H];
    for (i, c) in text.chars().enumerate() {
        let rows = glyph(c)?;
        for (y, row) in rows.iter().enumerate() {
            for (x, ch) in row.bytes().enumerate() {
                if ch == b'#' {
                    bits[y * w + i * ADVANCE + x] = 1;
                }
            }
        }
    }
    Some((w, GLYPH_H, bits))
}

/// Integer-scaled, centered placement of an `n`-glyph string inside a box
/// `bw x bh`, keeping a 1-pixel margin. `None` when it cannot fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextLayout {
    /// Pixels per bitmap cell.
    pub scale: usize,
    /// Offset of the scaled bitmap inside the box.
    pub dx: usize,
    pub dy: usize,
    /// Unscaled bitmap size.
    pub text_w: usize,
    pub text_h: usize,
}

pub fn layout_text(n_glyphs: usize, bw: usize, bh: usize) -> Option<TextLayout> {
    if n_glyphs == 0 || bw < 2 || bh < 2 {
        return None;
    }
    let (text_w, text_h) = (ADVANCE * n_glyphs - 1, GLYPH_H);
    let (inner_w, inner_h) = (bw - 2, bh - 2);
    let scale = (inner_w / text_w).min(inner_h / text_h);
    if scale == 0 {
        return None;
    }
    Some(TextLayout {
        scale,
        dx: 1 + (inner_w - scale * text_w) / 2,
        dy: 1 + (inner_h - scale * text_h) / 2,
        text_w,
        text_h,
    })
}

/// Longest renderable string length for a box, or 0.
pub fn max_glyphs(bw: usize, bh: usize) -> usize {
    if bw < 2 || bh < 2 || bh - 2 < GLYPH_H {
        return 0;
    }
    // scale >= 1 requires text_w = 6n-1 <= bw-2.
    (bw - 2 + 1) / ADVANCE
}
