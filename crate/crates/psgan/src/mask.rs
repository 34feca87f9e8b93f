//! Binary region masks and the sets of them a sample carries.

use crate::error::{Error, Result};

/// Single-channel binary mask over an `h x w` grid, stored as f32 {0,1}
/// so it can be bound to a tape directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if h == 0 || w == 0 || data.len() != h * w {
            return Err(Error::invalid(
                "mask",
                format!("{h}x{w} grid does not match {} values", data.len()),
            ));
        }
        if data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("mask", "mask values must be 0 or 1"));
        }
        Ok(Self { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x] != 0.0
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.data[y * self.w + x] = if on { 1.0 } else { 0.0 };
    }

    /// Number of active pixels.
    pub fn active(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// Tight bounding box `(y0, x0, y1, x1)` inclusive, if any pixel is set.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let (mut y0, mut x0, mut y1, mut x1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.h {
            for x in 0..self.w {
                if self.get(y, x) {
                    y0 = y0.min(y);
                    x0 = x0.min(x);
                    y1 = y1.max(y);
                    x1 = x1.max(x);
                }
            }
        }
        (y0 != usize::MAX).then_some((y0, x0, y1, x1))
    }
}

/// Area max-pool: an output pixel is active when any pixel of its
/// `factor x factor` cell is active. `factor` must divide both extents.
pub fn downsample_mask(mask: &Mask, factor: usize) -> Result<Mask> {
    if factor == 0 {
        return Err(Error::invalid("downsample_mask", "factor must be positive"));
    }
    if mask.h % factor != 0 || mask.w % factor != 0 {
        return Err(Error::invalid(
            "downsample_mask",
            format!("{}x{} not divisible by factor {factor}", mask.h, mask.w),
        ));
    }
    if factor == 1 {
        return Ok(mask.clone());
    }
    let (oh, ow) = (mask.h / factor, mask.w / factor);
    let mut out = Mask::zeros(oh, ow);
    for y in 0..mask.h {
        for x in 0..mask.w {
            if mask.get(y, x) {
                out.set(y / factor, x / factor, true);
            }
        }
    }
    Ok(out)
}

/// The region masks of one sample: equal grids, pairwise disjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    h: usize,
    w: usize,
    masks: Vec<Mask>,
}

impl MaskSet {
    pub fn new(h: usize, w: usize, masks: Vec<Mask>) -> Result<Self> {
        for (i, m) in masks.iter().enumerate() {
            if m.h != h || m.w != w {
                return Err(Error::invalid(
                    "mask_set",
                    format!("mask {i} is {}x{}, expected {h}x{w}", m.h, m.w),
                ));
            }
        }
        let mut owner: Vec<Option<usize>> = vec![None; h * w];
        for (i, m) in masks.iter().enumerate() {
            for (p, &v) in m.data.iter().enumerate() {
                if v != 0.0 {
                    if let Some(first) = owner[p] {
                        return Err(Error::OverlappingMasks { first, second: i });
                    }
                    owner[p] = Some(i);
                }
            }
        }
        Ok(Self { h, w, masks })
    }

    pub fn empty(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            masks: Vec::new(),
        }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn get(&self, i: usize) -> &Mask {
        &self.masks[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Mask> {
        self.masks.iter()
    }

    /// Complement of the union of all region masks.
    pub fn background(&self) -> Mask {
        let mut bg = Mask {
            h: self.h,
            w: self.w,
            data: vec![1.0; self.h * self.w],
        };
        for m in &self.masks {
            for (b, &v) in bg.data.iter_mut().zip(&m.data) {
                if v != 0.0 {
                    *b = 0.0;
                }
            }
        }
        bg
    }

    /// Downsamples every mask by `factor`. Max-pooling can make regions
    /// collide; contested pixels go to the lowest-index mask. Masks left
    /// with fewer than 2 active pixels are dropped (their pixels fall to
    /// the background).
    pub fn downsample(&self, factor: usize) -> Result<MaskSet> {
        if factor == 0 || self.h % factor != 0 || self.w % factor != 0 {
            return Err(Error::invalid(
                "downsample_mask",
                format!("{}x{} not divisible by factor {factor}", self.h, self.w),
            ));
        }
        let mut claimed = vec![false; (self.h / factor) * (self.w / factor)];
        let mut out = Vec::new();
        for m in &self.masks {
            let mut d = downsample_mask(m, factor)?;
            for (p, c) in claimed.iter_mut().enumerate() {
                if d.data[p] != 0.0 {
                    if *c {
                        d.data[p] = 0.0;
                    } else {
                        *c = true;
                    }
                }
            }
            if d.active() >= 2 {
                out.push(d);
            }
        }
        MaskSet::new(self.h / factor, self.w / factor, out)
    }
}
