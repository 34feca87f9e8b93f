//! Synthetic desk-scale scenes: gradient backgrounds with rendered text
//! boxes, plus matching annotations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::annotations::Annotation;
use super::font::{layout_text, max_glyphs, render_text, CHARSET, GLYPH_H};
use super::sample::min_dim_for;
use crate::error::{Error, Result};

/// Rejection-sampling budget per text box.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;
/// Background colors stay inside this band so noise never clips.
const BG_BAND: (f32, f32) = (0.15, 0.85);
/// Per-subpixel uniform noise amplitude.
const NOISE: f32 = 0.02;
/// Text boxes draw their fill and ink from opposite luma bands.
const DARK_BAND: (f32, f32) = (0.0, 0.35);
const BRIGHT_BAND: (f32, f32) = (0.65, 1.0);
/// Longest sampled transcript.
const MAX_TRANSCRIPT: usize = 4;

/// Parameters of the synthetic generator. The glyph alphabet and font are
/// the bundled bitmap set; palettes are the fixed bands above.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSpec {
    pub image_size: usize,
    /// Boxes per image, sampled uniformly from `regions_min..=regions_max`.
    pub regions_min: usize,
    pub regions_max: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            regions_min: 2,
            regions_max: 2,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.regions_min < 1 || self.regions_min > self.regions_max || self.regions_max > 3 {
            return Err(Error::InvalidConfig(format!(
                "regions_min..=regions_max must lie within 1..=3, got {}..={}",
                self.regions_min, self.regions_max
            )));
        }
        let (w_min, h_min) = box_min_dims(self.image_size);
        if w_min + 2 > self.image_size || h_min + 2 > self.image_size {
            return Err(Error::InvalidConfig(format!(
                "image_size {} cannot hold a {}x{} text box",
                self.image_size, w_min, h_min
            )));
        }
        Ok(())
    }
}

/// One generated scene: planar `[3,S,S]` pixels in [0,1] plus annotations.
#[derive(Debug, Clone)]
pub struct SynthImage {
    pub pixels: Vec<f32>,
    pub annotations: Vec<Annotation>,
}

/// Smallest box that both passes the size filter and fits one glyph.
fn box_min_dims(size: usize) -> (usize, usize) {
    let w = (min_dim_for(size).ceil() as usize).max(13);
    (w, GLYPH_H + 2)
}

fn sample_band(rng: &mut ChaCha8Rng, band: (f32, f32)) -> [f32; 3] {
    [
        rng.gen_range(band.0..=band.1),
        rng.gen_range(band.0..=band.1),
        rng.gen_range(band.0..=band.1),
    ]
}

#[derive(Clone, Copy)]
struct TextBox {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

impl TextBox {
    fn overlaps(&self, o: &TextBox) -> bool {
        self.x0 < o.x0 + o.w && o.x0 < self.x0 + self.w && self.y0 < o.y0 + o.h && o.y0 < self.y0 + self.h
    }
}

fn place_boxes(rng: &mut ChaCha8Rng, size: usize, count: usize) -> Result<Vec<TextBox>> {
    let (w_min, h_min) = box_min_dims(size);
    let w_max = (size / 2).clamp(w_min, size - 2);
    let h_max = (size / 3).clamp(h_min, size - 2);
    let mut boxes: Vec<TextBox> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let w = rng.gen_range(w_min..=w_max);
            let h = rng.gen_range(h_min..=h_max);
            let b = TextBox {
                x0: rng.gen_range(1..=size - 1 - w),
                y0: rng.gen_range(1..=size - 1 - h),
                w,
                h,
            };
            if boxes.iter().all(|o| !b.overlaps(o)) {
                boxes.push(b);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::PlacementFailed {
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
    }
    Ok(boxes)
}

fn fill_rect(pixels: &mut [f32], size: usize, b: &TextBox, color: [f32; 3]) {
    let hw = size * size;
    for y in b.y0..b.y0 + b.h {
        for x in b.x0..b.x0 + b.w {
            let i = y * size + x;
            pixels[i] = color[0];
            pixels[hw + i] = color[1];
            pixels[2 * hw + i] = color[2];
        }
    }
}

fn draw_text(pixels: &mut [f32], size: usize, b: &TextBox, text: &str, color: [f32; 3]) {
    let layout = layout_text(text.chars().count(), b.w, b.h).expect("transcript sized to fit");
    let (tw, th, bits) = render_text(text).expect("transcript drawn from CHARSET");
    let hw = size * size;
    for ty in 0..th {
        for tx in 0..tw {
            if bits[ty * tw + tx] != 0 {
                for sy in 0..layout.scale {
                    for sx in 0..layout.scale {
                        let y = b.y0 + layout.dy + ty * layout.scale + sy;
                        let x = b.x0 + layout.dx + tx * layout.scale + sx;
                        let i = y * size + x;
                        pixels[i] = color[0];
                        pixels[hw + i] = color[1];
                        pixels[2 * hw + i] = color[2];
                    }
                }
            }
        }
    }
}

/// Generates image `index` of a dataset. Each index gets its own RNG
/// stream, so results do not depend on generation order or thread count.
pub fn generate_image(spec: &SynthSpec, index: u64) -> Result<SynthImage> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let size = spec.image_size;
    let hw = size * size;

    // Background: solid, or a two-color horizontal/vertical gradient.
    let kind = rng.gen_range(0..3u32);
    let c0 = sample_band(&mut rng, BG_BAND);
    let c1 = if kind == 0 { c0 } else { sample_band(&mut rng, BG_BAND) };
    let mut pixels = vec![0.0f32; 3 * hw];
    let denom = (size - 1).max(1) as f32;
    for y in 0..size {
        for x in 0..size {
            let t = match kind {
                1 => x as f32 / denom,
                2 => y as f32 / denom,
                _ => 0.0,
            };
            let i = y * size + x;
            for c in 0..3 {
                pixels[c * hw + i] = c0[c] + t * (c1[c] - c0[c]);
            }
        }
    }

    let count = rng.gen_range(spec.regions_min..=spec.regions_max);
    let boxes = place_boxes(&mut rng, size, count)?;
    let mut annotations = Vec::with_capacity(boxes.len());
    for b in &boxes {
        let dark = sample_band(&mut rng, DARK_BAND);
        let bright = sample_band(&mut rng, BRIGHT_BAND);
        let (fill, ink) = if rng.gen_bool(0.5) { (dark, bright) } else { (bright, dark) };
        let max_len = max_glyphs(b.w, b.h).min(MAX_TRANSCRIPT);
        let len = rng.gen_range(1..=max_len);
        let chars: Vec<char> = CHARSET.chars().collect();
        let text: String = (0..len).map(|_| chars[rng.gen_range(0..chars.len())]).collect();
        fill_rect(&mut pixels, size, b, fill);
        draw_text(&mut pixels, size, b, &text, ink);
        let (x0, y0) = (b.x0 as f32, b.y0 as f32);
        let (x1, y1) = ((b.x0 + b.w) as f32, (b.y0 + b.h) as f32);
        annotations.push(Annotation {
            points: vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)],
            script: "Latin".into(),
            transcript: text,
        });
    }

    for v in &mut pixels {
        *v = (*v + rng.gen_range(-NOISE..=NOISE)).clamp(0.0, 1.0);
    }

    Ok(SynthImage {
        pixels,
        annotations,
    })
}

/// Generates `n` scenes. Deterministic in `spec` alone.
pub fn generate_synthetic(spec: &SynthSpec, n: usize) -> Result<Vec<SynthImage>> {
    (0..n as u64).map(|i| generate_image(spec, i)).collect()
}
