//! Even-odd scanline rasterization of annotation polygons.

use crate::error::{Error, Result};
use crate::mask::Mask;

/// Fills a polygon into an `h x w` mask. A pixel is inside when its center
/// crosses the boundary an odd number of times (even-odd rule), so
/// self-intersecting polygons leave holes rather than double-fill.
pub fn rasterize_polygon(points: &[(f32, f32)], h: usize, w: usize) -> Result<Mask> {
    if points.len() < 3 {
        return Err(Error::invalid(
            "rasterize_polygon",
            format!("{} points; a polygon needs at least 3", points.len()),
        ));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::invalid("rasterize_polygon", "non-finite coordinate"));
    }
    let mut mask = Mask::zeros(h, w);
    let mut xs: Vec<f32> = Vec::with_capacity(points.len());
    for row in 0..h {
        let yc = row as f32 + 0.5;
        xs.clear();
        for i in 0..points.len() {
            let (x1, y1) = points[i];
            let (x2, y2) = points[(i + 1) % points.len()];
            // Half-open rule [min, max): shared vertices count once.
            if (y1 <= yc && yc < y2) || (y2 <= yc && yc < y1) {
                xs.push(x1 + (yc - y1) / (y2 - y1) * (x2 - x1));
            }
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in xs.chunks_exact(2) {
            let (xa, xb) = (pair[0], pair[1]);
            // Pixel centers in [xa, xb).
            let start = (xa - 0.5).ceil().max(0.0) as usize;
            let end = ((xb - 0.5).ceil().max(0.0) as usize).min(w);
            for col in start..end {
                mask.set(row, col, true);
            }
        }
    }
    if mask.active() == 0 {
        return Err(Error::DegeneratePatch { active: 0 });
    }
    Ok(mask)
}
