//! Region filtering and assembling (content, style, mask, target) quadruples.

use image::RgbImage;

use super::annotations::Annotation;
use super::edge::{luma, region_edges};
use super::font::{layout_text, render_text};
use super::raster::rasterize_polygon;
use crate::error::{Error, Result};
use crate::mask::{Mask, MaskSet};

/// Smallest admissible bounding-box side at the reference resolution.
pub const MIN_REGION_DIM: f32 = 200.0;
/// Resolution [`MIN_REGION_DIM`] is defined at.
pub const REFERENCE_SIZE: f32 = 1000.0;

/// Region-size threshold scaled to a working resolution.
pub fn min_dim_for(image_size: usize) -> f32 {
    MIN_REGION_DIM * image_size as f32 / REFERENCE_SIZE
}

/// Drops ignore-flagged regions and those whose largest bounding-box
/// dimension spans under `min_dim` pixels.
pub fn filter_regions<'a>(anns: &'a [Annotation], min_dim: f32) -> Vec<&'a Annotation> {
    anns.iter()
        .filter(|a| !a.is_ignore() && a.max_dimension() >= min_dim)
        .collect()
}

/// One training/evaluation example. Images are planar `[3,S,S]` in [-1,1];
/// `transcripts[i]` belongs to `masks.get(i)`. During training the style
/// image equals the target.
#[derive(Debug, Clone)]
pub struct Sample {
    pub size: usize,
    pub content: Vec<f32>,
    pub style: Vec<f32>,
    pub target: Vec<f32>,
    pub masks: MaskSet,
    pub transcripts: Vec<String>,
}

/// Planar `[3,H,W]` floats in [0,1] from an 8-bit image.
pub fn image_to_planar(img: &RgbImage) -> (usize, usize, Vec<f32>) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let hw = h * w;
    let mut out = vec![0.0f32; 3 * hw];
    for (i, p) in img.pixels().enumerate() {
        out[i] = p.0[0] as f32 / 255.0;
        out[hw + i] = p.0[1] as f32 / 255.0;
        out[2 * hw + i] = p.0[2] as f32 / 255.0;
    }
    (h, w, out)
}

/// 8-bit image from planar `[3,H,W]` floats in [0,1], clamped.
pub fn planar_to_image(h: usize, w: usize, data: &[f32]) -> RgbImage {
    assert_eq!(data.len(), 3 * h * w);
    let hw = h * w;
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([q(data[i]), q(data[hw + i]), q(data[2 * hw + i])])
    })
}

pub fn unit_to_signed(v: &mut [f32]) {
    for x in v {
        *x = *x * 2.0 - 1.0;
    }
}

pub fn signed_to_unit(v: &mut [f32]) {
    for x in v {
        *x = (*x + 1.0) * 0.5;
    }
}

/// Replaces the masked pixels of all three channels with a binary edge
/// map, mapped to {-1, +1}.
fn paint_edges(content: &mut [f32], hw: usize, mask: &Mask, edges: &[f32]) {
    for (i, &m) in mask.data().iter().enumerate() {
        if m != 0.0 {
            let v = edges[i] * 2.0 - 1.0;
            content[i] = v;
            content[hw + i] = v;
            content[2 * hw + i] = v;
        }
    }
}

/// Rasterizes retained annotations into disjoint masks. Overlaps resolve
/// in favor of the lower-index region; regions left with fewer than 2
/// active pixels (or rasterizing to nothing) are dropped.
fn rasterize_regions(
    kept: &[&Annotation],
    size: usize,
) -> Result<(Vec<Mask>, Vec<String>)> {
    let mut claimed = vec![false; size * size];
    let mut masks = Vec::new();
    let mut transcripts = Vec::new();
    for a in kept {
        let mut m = match rasterize_polygon(&a.points, size, size) {
            Ok(m) => m,
            Err(Error::DegeneratePatch { .. }) => continue,
            Err(e) => return Err(e),
        };
        for i in 0..size * size {
            if m.data()[i] != 0.0 {
                if claimed[i] {
                    m.set(i / size, i % size, false);
                } else {
                    claimed[i] = true;
                }
            }
        }
        if m.active() < 2 {
            for (i, &v) in m.data().iter().enumerate() {
                if v != 0.0 {
                    claimed[i] = false;
                }
            }
            continue;
        }
        masks.push(m);
        transcripts.push(a.transcript.clone());
    }
    Ok((masks, transcripts))
}

/// Builds a sample from a square image and its annotations: regions are
/// filtered at the scaled size threshold, rasterized into disjoint masks,
/// and the content image carries each region's binary edge map instead of
/// its pixels. `Ok(None)` means no region survived and the sample should
/// be skipped.
pub fn build_sample(img: &RgbImage, anns: &[Annotation]) -> Result<Option<Sample>> {
    let (h, w, unit) = image_to_planar(img);
    if h != w {
        return Err(Error::invalid(
            "build_sample",
            format!("image must be square, got {w}x{h}"),
        ));
    }
    let size = h;
    let kept = filter_regions(anns, min_dim_for(size));
    let (masks, transcripts) = rasterize_regions(&kept, size)?;
    if masks.is_empty() {
        return Ok(None);
    }
    let masks = MaskSet::new(size, size, masks)?;

    let mut target = unit.clone();
    unit_to_signed(&mut target);

    let gray = luma(&unit, size, size);
    let mut content = target.clone();
    for m in masks.iter() {
        let edges = region_edges(&gray, size, size, m);
        paint_edges(&mut content, size * size, m, &edges);
    }

    Ok(Some(Sample {
        size,
        content,
        style: target.clone(),
        target,
        masks,
        transcripts,
    }))
}

/// Masks for user-selected replacement regions on a `size` x `size`
/// canvas. Unlike `build_sample` there is no minimum-size filter — the
/// selection is explicit — and transcripts (including the ignore marker)
/// play no role. Overlaps still resolve to the lower-index polygon and
/// degenerate regions are dropped.
pub fn replacement_masks(anns: &[Annotation], size: usize) -> Result<MaskSet> {
    let all: Vec<&Annotation> = anns.iter().collect();
    let (masks, _) = rasterize_regions(&all, size)?;
    MaskSet::new(size, size, masks)
}

/// Content image for replacement: each mask gets the edge map of its text
/// rendered into the mask's bounding box, in place of edges taken from
/// the image.
pub fn replacement_content(
    target: &[f32],
    size: usize,
    masks: &MaskSet,
    texts: &[String],
) -> Result<Vec<f32>> {
    if texts.len() != masks.len() {
        return Err(Error::invalid(
            "replacement_content",
            format!("{} texts for {} regions", texts.len(), masks.len()),
        ));
    }
    let mut content = target.to_vec();
    for (m, text) in masks.iter().zip(texts) {
        let edges = rendered_text_edges(size, m, text)?;
        paint_edges(&mut content, size * size, m, &edges);
    }
    Ok(content)
}

/// Binary edge map of `text` drawn white-on-black inside the mask's
/// bounding box (integer scale, centered).
pub fn rendered_text_edges(size: usize, mask: &Mask, text: &str) -> Result<Vec<f32>> {
    let (y0, x0, y1, x1) = mask
        .bbox()
        .ok_or_else(|| Error::invalid("rendered_text_edges", "empty mask"))?;
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let n = text.chars().count();
    let layout = layout_text(n, bw, bh).ok_or_else(|| {
        Error::invalid(
            "rendered_text_edges",
            format!("{text:?} does not fit a {bw}x{bh} region"),
        )
    })?;
    let (tw, _, bits) = render_text(text).ok_or_else(|| {
        Error::invalid(
            "rendered_text_edges",
            format!("{text:?} contains unsupported characters"),
        )
    })?;
    let mut gray = vec![0.0f32; size * size];
    for ty in 0..layout.text_h {
        for tx in 0..tw {
            if bits[ty * tw + tx] != 0 {
                for sy in 0..layout.scale {
                    for sx in 0..layout.scale {
                        let y = y0 + layout.dy + ty * layout.scale + sy;
                        let x = x0 + layout.dx + tx * layout.scale + sx;
                        gray[y * size + x] = 1.0;
                    }
                }
            }
        }
    }
    Ok(region_edges(&gray, size, size, mask))
}
