//! Per-region binary Sobel edge maps.

use crate::mask::Mask;

/// Threshold on the region-normalized gradient magnitude.
pub const EDGE_THRESHOLD: f32 = 0.25;

fn clamp(v: isize, hi: usize) -> usize {
    v.clamp(0, hi as isize - 1) as usize
}

/// Sobel gradient magnitude of a grayscale image, replicating borders.
pub fn sobel_magnitude(gray: &[f32], h: usize, w: usize) -> Vec<f32> {
    assert_eq!(gray.len(), h * w);
    let px = |y: isize, x: isize| gray[clamp(y, h) * w + clamp(x, w)];
    let mut mag = vec![0.0f32; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (tl, tc, tr) = (px(y - 1, x - 1), px(y - 1, x), px(y - 1, x + 1));
            let (ml, mr) = (px(y, x - 1), px(y, x + 1));
            let (bl, bc, br) = (px(y + 1, x - 1), px(y + 1, x), px(y + 1, x + 1));
            let gx = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl);
            let gy = (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr);
            mag[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    mag
}

/// Binary edge map of one region: Sobel magnitude normalized by the peak
/// inside the mask, thresholded at [`EDGE_THRESHOLD`]. Pixels outside the
/// mask are 0; a flat region (zero peak) has no edges.
pub fn region_edges(gray: &[f32], h: usize, w: usize, mask: &Mask) -> Vec<f32> {
    let mag = sobel_magnitude(gray, h, w);
    let peak = mag
        .iter()
        .zip(mask.data())
        .filter(|(_, &m)| m != 0.0)
        .map(|(&v, _)| v)
        .fold(0.0f32, f32::max);
    let mut out = vec![0.0f32; h * w];
    if peak <= 0.0 {
        return out;
    }
    for i in 0..h * w {
        if mask.data()[i] != 0.0 && mag[i] / peak >= EDGE_THRESHOLD {
            out[i] = 1.0;
        }
    }
    out
}

/// Rec. 601 luma of planar `[3,H,W]` RGB in [0,1].
pub fn luma(rgb: &[f32], h: usize, w: usize) -> Vec<f32> {
    assert_eq!(rgb.len(), 3 * h * w);
    let hw = h * w;
    (0..hw)
        .map(|i| 0.299 * rgb[i] + 0.587 * rgb[hw + i] + 0.114 * rgb[2 * hw + i])
        .collect()
}
