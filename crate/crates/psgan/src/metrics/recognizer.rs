//! Nearest-prototype recognizers over the bundled glyph font: a fixed
//! oracle for scoring, and a small trainable classifier for the
//! augmentation proxy experiment.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{char_error_rate, evaluate, EvalCase};
use crate::data::edge::luma;
use crate::data::font::{glyph, layout_text, max_glyphs, CHARSET, GLYPH_H, GLYPH_W};
use crate::error::{Error, Result};
use crate::mask::Mask;

/// Maps a masked region of a planar `[3,S,S]` image in [-1,1] to text.
/// Total: recognizers return a string (possibly empty), reserving errors
/// for genuine failures, which callers score as empty predictions.
pub trait Recognizer {
    fn recognize(&self, pixels: &[f32], size: usize, mask: &Mask) -> Result<String>;
}

const CELLS: usize = GLYPH_W * GLYPH_H;
/// Longest string a recognizer will hypothesize.
const MAX_CANDIDATE_GLYPHS: usize = 8;
/// A pooled cell flatter than this cannot carry a glyph.
const FLAT_STD: f32 = 1e-4;

/// Luma crop of the mask's bounding box, in [0,1].
fn crop_gray(pixels: &[f32], size: usize, mask: &Mask) -> Option<(usize, usize, Vec<f32>)> {
    let (y0, x0, y1, x1) = mask.bbox()?;
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let full = luma(
        &pixels.iter().map(|&v| (v + 1.0) * 0.5).collect::<Vec<_>>(),
        size,
        size,
    );
    let mut gray = vec![0.0f32; bw * bh];
    for y in 0..bh {
        for x in 0..bw {
            gray[y * bw + x] = full[(y0 + y) * size + (x0 + x)];
        }
    }
    Some((bw, bh, gray))
}

/// Splits the box into `n` glyph cells on the renderer's own grid and
/// average-pools each down to the font's 5x7 resolution.
fn pooled_cells(gray: &[f32], bw: usize, bh: usize, n: usize) -> Option<Vec<[f32; CELLS]>> {
    let layout = layout_text(n, bw, bh)?;
    let s = layout.scale;
    let mut cells = Vec::with_capacity(n);
    for g in 0..n {
        let mut cell = [0.0f32; CELLS];
        for cy in 0..GLYPH_H {
            for cx in 0..GLYPH_W {
                let mut sum = 0.0;
                for dy in 0..s {
                    for dx in 0..s {
                        let y = layout.dy + cy * s + dy;
                        let x = layout.dx + (g * (GLYPH_W + 1) + cx) * s + dx;
                        sum += gray[y * bw + x];
                    }
                }
                cell[cy * GLYPH_W + cx] = sum / (s * s) as f32;
            }
        }
        cells.push(cell);
    }
    Some(cells)
}

/// Zero-mean, unit-std version of a cell; `None` when flat.
fn standardize(cell: &[f32; CELLS]) -> Option<[f32; CELLS]> {
    let mean = cell.iter().sum::<f32>() / CELLS as f32;
    let var = cell.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / CELLS as f32;
    let std = var.sqrt();
    if std < FLAT_STD {
        return None;
    }
    let mut out = [0.0f32; CELLS];
    for (o, &v) in out.iter_mut().zip(cell.iter()) {
        *o = (v - mean) / std;
    }
    Some(out)
}

/// Normalized cross-correlation of two standardized cells, in [-1, 1].
fn ncc(a: &[f32; CELLS], b: &[f32; CELLS]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f32>() / CELLS as f32
}

/// Zero-mean, unit-std copy of an arbitrary buffer; `None` when flat.
fn standardize_slice(v: &[f32]) -> Option<Vec<f32>> {
    let n = v.len() as f32;
    let mean = v.iter().sum::<f32>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f32>() / n;
    let std = var.sqrt();
    if std < FLAT_STD {
        return None;
    }
    Some(v.iter().map(|x| (x - mean) / std).collect())
}

/// 0/1 render of `text` on the same grid `layout_text` places it.
fn render_into_box(text: &str, bw: usize, bh: usize) -> Option<Vec<f32>> {
    let layout = layout_text(text.chars().count(), bw, bh)?;
    let (tw, th, bits) = crate::data::font::render_text(text)?;
    let mut out = vec![0.0f32; bw * bh];
    for ty in 0..th {
        for tx in 0..tw {
            if bits[ty * tw + tx] != 0 {
                for sy in 0..layout.scale {
                    for sx in 0..layout.scale {
                        let y = layout.dy + ty * layout.scale + sy;
                        let x = layout.dx + tx * layout.scale + sx;
                        out[y * bw + x] = 1.0;
                    }
                }
            }
        }
    }
    Some(out)
}

fn glyph_bitmap(c: char) -> Option<[f32; CELLS]> {
    let rows = glyph(c)?;
    let mut out = [0.0f32; CELLS];
    for (y, row) in rows.iter().enumerate() {
        for (x, ch) in row.bytes().enumerate() {
            out[y * GLYPH_W + x] = f32::from(u8::from(ch == b'#'));
        }
    }
    Some(out)
}

/// Fixed nearest-prototype recognizer matching against the rendering
/// font itself: deterministic and exact on clean renders, in either
/// ink polarity.
pub struct OracleRecognizer {
    prototypes: Vec<(char, [f32; CELLS])>,
}

impl Default for OracleRecognizer {
    fn default() -> Self {
        Self::new()
    }
}

impl OracleRecognizer {
    pub fn new() -> Self {
        let prototypes = CHARSET
            .chars()
            .map(|c| {
                let bits = glyph_bitmap(c).expect("charset glyph");
                (c, standardize(&bits).expect("glyphs are never flat"))
            })
            .collect();
        Self { prototypes }
    }
}

/// Best string hypothesis by mean per-cell correlation over candidate
/// glyph counts. Per candidate the ink polarity is chosen once for the
/// whole string; a strictly better mean wins, so ties resolve to the
/// shortest string. Used by the toy recognizer; the oracle re-verifies
/// candidates against the whole box instead, which a centered sub-string
/// (its cells can coincide exactly with the middle glyphs) would fool.
fn best_hypothesis(
    gray: &[f32],
    bw: usize,
    bh: usize,
    score_cell: impl Fn(&[f32; CELLS]) -> Option<(char, f32, char, f32)>,
) -> String {
    let mut best: Option<(f32, String)> = None;
    for n in 1..=max_glyphs(bw, bh).min(MAX_CANDIDATE_GLYPHS) {
        let Some(cells) = pooled_cells(gray, bw, bh, n) else {
            continue;
        };
        let mut pos = (String::new(), 0.0f32);
        let mut neg = (String::new(), 0.0f32);
        let mut ok = true;
        for cell in &cells {
            let Some(std_cell) = standardize(cell) else {
                ok = false;
                break;
            };
            let Some((cp, sp, cn, sn)) = score_cell(&std_cell) else {
                ok = false;
                break;
            };
            pos.0.push(cp);
            pos.1 += sp;
            neg.0.push(cn);
            neg.1 += sn;
        }
        if !ok {
            continue;
        }
        let (text, total) = if pos.1 >= neg.1 { pos } else { neg };
        let score = total / n as f32;
        if best.as_ref().map_or(true, |(b, _)| score > *b) {
            best = Some((score, text));
        }
    }
    best.map(|(_, t)| t).unwrap_or_default()
}

impl Recognizer for OracleRecognizer {
    fn recognize(&self, pixels: &[f32], size: usize, mask: &Mask) -> Result<String> {
        let Some((bw, bh, gray)) = crop_gray(pixels, size, mask) else {
            return Ok(String::new());
        };
        let Some(gray_std) = standardize_slice(&gray) else {
            return Ok(String::new());
        };
        let mut best: Option<(f32, String)> = None;
        for n in 1..=max_glyphs(bw, bh).min(MAX_CANDIDATE_GLYPHS) {
            let Some(cells) = pooled_cells(&gray, bw, bh, n) else {
                continue;
            };
            // Per-cell nearest prototype under each ink polarity, then the
            // candidate is scored by reconstructing the whole box.
            for polarity in [1.0f32, -1.0] {
                let mut text = String::new();
                let mut segmentable = true;
                for cell in &cells {
                    let Some(v) = standardize(cell) else {
                        segmentable = false;
                        break;
                    };
                    let mut top = ('?', f32::NEG_INFINITY);
                    for (c, p) in &self.prototypes {
                        let d = polarity * ncc(&v, p);
                        if d > top.1 {
                            top = (*c, d);
                        }
                    }
                    text.push(top.0);
                }
                if !segmentable {
                    break;
                }
                let Some(render) = render_into_box(&text, bw, bh) else {
                    continue;
                };
                let Some(render_std) = standardize_slice(&render) else {
                    continue;
                };
                let dot: f32 = gray_std.iter().zip(&render_std).map(|(a, b)| a * b).sum();
                let score = polarity * dot / (bw * bh) as f32;
                if best.as_ref().map_or(true, |(b, _)| score > *b) {
                    best = Some((score, text));
                }
            }
        }
        Ok(best.map(|(_, t)| t).unwrap_or_default())
    }
}

/// Trainable nearest-prototype classifier: per-class sign-aligned mean of
/// standardized cells. Weak on purpose; it exists to measure whether
/// augmentation data helps.
#[derive(Default, Clone)]
pub struct ToyRecognizer {
    sums: HashMap<char, (Vec<f32>, usize)>,
}

impl ToyRecognizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of glyph classes seen so far.
    pub fn n_classes(&self) -> usize {
        self.sums.len()
    }

    /// Adds one labeled region, segmenting at the known glyph count.
    /// Returns false when the region cannot be segmented for this text.
    pub fn add_example(&mut self, pixels: &[f32], size: usize, mask: &Mask, text: &str) -> bool {
        let Some((bw, bh, gray)) = crop_gray(pixels, size, mask) else {
            return false;
        };
        let n = text.chars().count();
        if n == 0 {
            return false;
        }
        let Some(cells) = pooled_cells(&gray, bw, bh, n) else {
            return false;
        };
        let mut used = false;
        for (c, cell) in text.chars().zip(&cells) {
            let c = c.to_ascii_uppercase();
            let Some(v) = standardize(cell) else {
                continue;
            };
            let (sum, count) = self
                .sums
                .entry(c)
                .or_insert_with(|| (vec![0.0; CELLS], 0));
            // Align polarity to the running mean before accumulating.
            let dot: f32 = sum.iter().zip(&v).map(|(a, b)| a * b).sum();
            let sign = if *count > 0 && dot < 0.0 { -1.0 } else { 1.0 };
            for (s, x) in sum.iter_mut().zip(&v) {
                *s += sign * x;
            }
            *count += 1;
            used = true;
        }
        used
    }

    fn prototypes(&self) -> Vec<(char, [f32; CELLS])> {
        let mut out: Vec<(char, [f32; CELLS])> = Vec::new();
        for (&c, (sum, count)) in &self.sums {
            if *count == 0 {
                continue;
            }
            let mut mean = [0.0f32; CELLS];
            for (m, s) in mean.iter_mut().zip(sum) {
                *m = s / *count as f32;
            }
            if let Some(p) = standardize(&mean) {
                out.push((c, p));
            }
        }
        out.sort_by_key(|(c, _)| *c);
        out
    }
}

impl Recognizer for ToyRecognizer {
    fn recognize(&self, pixels: &[f32], size: usize, mask: &Mask) -> Result<String> {
        let protos = self.prototypes();
        if protos.is_empty() {
            return Ok(String::new());
        }
        let Some((bw, bh, gray)) = crop_gray(pixels, size, mask) else {
            return Ok(String::new());
        };
        Ok(best_hypothesis(&gray, bw, bh, |cell| {
            let mut pos = ('?', f32::NEG_INFINITY);
            let mut neg = ('?', f32::NEG_INFINITY);
            for (c, p) in &protos {
                let d = ncc(cell, p);
                if d > pos.1 {
                    pos = (*c, d);
                }
                if -d > neg.1 {
                    neg = (*c, -d);
                }
            }
            Some((pos.0, pos.1, neg.0, neg.1))
        }))
    }
}

/// Before/after error rates of the augmentation experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyReport {
    /// Held-out character error rate without augmentation.
    pub baseline: f64,
    /// Held-out character error rate with augmentation.
    pub augmented: f64,
    pub n_train: usize,
    pub n_synthetic: usize,
    pub n_eval: usize,
}

fn train_toy(cases: &[&EvalCase]) -> ToyRecognizer {
    let mut toy = ToyRecognizer::new();
    for case in cases {
        for (mask, text) in case.masks.iter().zip(&case.truths) {
            toy.add_example(&case.pixels, case.size, mask, text);
        }
    }
    toy
}

fn held_out_cer<R: Recognizer>(cases: &[EvalCase], r: &R) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for case in cases {
        for (mask, truth) in case.masks.iter().zip(&case.truths) {
            let pred = r.recognize(&case.pixels, case.size, mask).unwrap_or_default();
            total += char_error_rate(&pred, truth)?;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyReduction { op: "held_out_cer" });
    }
    Ok(total / n as f64)
}

/// Trains the toy recognizer twice — on `train` alone, and on `train`
/// plus a seeded draw of `fraction * train.len()` images from
/// `synthetic` — and reports both held-out error rates.
pub fn training_proxy(
    train: &[EvalCase],
    held_out: &[EvalCase],
    synthetic: &[EvalCase],
    fraction: f64,
    seed: u64,
) -> Result<ProxyReport> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(
            "training_proxy",
            format!("fraction {fraction} outside [0, 1]"),
        ));
    }
    let k = ((fraction * train.len() as f64).floor() as usize).min(synthetic.len());
    let mut order: Vec<usize> = (0..synthetic.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let picked: Vec<&EvalCase> = order[..k].iter().map(|&i| &synthetic[i]).collect();

    let base_cases: Vec<&EvalCase> = train.iter().collect();
    let mut aug_cases = base_cases.clone();
    aug_cases.extend(picked);

    let baseline = held_out_cer(held_out, &train_toy(&base_cases))?;
    let augmented = held_out_cer(held_out, &train_toy(&aug_cases))?;
    Ok(ProxyReport {
        baseline,
        augmented,
        n_train: train.len(),
        n_synthetic: k,
        n_eval: held_out.len(),
    })
}

/// Evaluates raw target images against their own transcripts.
pub fn evaluate_targets<R: Recognizer>(
    entries: &[(String, crate::data::Sample)],
    recognizer: &R,
) -> Result<super::Evaluation> {
    let cases: Vec<EvalCase> = entries
        .iter()
        .map(|(id, s)| EvalCase {
            id: id.clone(),
            size: s.size,
            pixels: s.target.clone(),
            masks: s.masks.clone(),
            truths: s.transcripts.clone(),
        })
        .collect();
    evaluate(&cases, recognizer)
}
