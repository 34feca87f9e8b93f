//! conv2d / conv2d_transpose via im2col + sgemm.

use super::{gemm::sgemm, grad_mut, Node, Op, Tape, TensorId};
use crate::error::{Error, Result};

/// Shared geometry: an image `[c, h, w]` sampled by a `kh x kw` kernel at
/// `oh x ow` positions. conv2d reads the image and writes positions;
/// conv2d_transpose does the reverse.
#[derive(Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

impl Geom {
    fn cols_len(&self) -> usize {
        self.c * self.kh * self.kw * self.oh * self.ow
    }
    fn image_len(&self) -> usize {
        self.c * self.h * self.w
    }
}

fn conv_out(extent: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = extent + 2 * padding;
    if padded < k {
        return Err(Error::invalid(
            "conv2d",
            format!("kernel {k} larger than padded extent {padded}"),
        ));
    }
    Ok((padded - k) / stride + 1)
}

/// Gathers kernel windows: `cols[(c*kh+ki)*kw+kj, oi*ow+oj]`.
fn im2col(x: &[f32], g: &Geom, cols: &mut [f32]) {
    let n = g.oh * g.ow;
    let mut row = 0usize;
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut cols[row * n..(row + 1) * n];
                for oi in 0..g.oh {
                    let ih = (oi * g.stride + ki) as isize - g.padding as isize;
                    let dst_row = &mut dst[oi * g.ow..(oi + 1) * g.ow];
                    if ih < 0 || ih >= g.h as isize {
                        dst_row.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (oj, d) in dst_row.iter_mut().enumerate() {
                        let iw = (oj * g.stride + kj) as isize - g.padding as isize;
                        *d = if iw < 0 || iw >= g.w as isize {
                            0.0
                        } else {
                            src_row[iw as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add inverse of [`im2col`].
fn col2im(cols: &[f32], g: &Geom, x: &mut [f32]) {
    let n = g.oh * g.ow;
    let mut row = 0usize;
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &cols[row * n..(row + 1) * n];
                for oi in 0..g.oh {
                    let ih = (oi * g.stride + ki) as isize - g.padding as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (oj, &s) in src[oi * g.ow..(oi + 1) * g.ow].iter().enumerate() {
                        let iw = (oj * g.stride + kj) as isize - g.padding as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst_row[iw as usize] += s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

impl Tape {
    /// 2D convolution. `x` is `[B,IC,H,W]`, `w` is `[OC,IC,KH,KW]`,
    /// `bias` is `[OC]`. Output is `[B,OC,(H+2p-KH)/s+1,(W+2p-KW)/s+1]`.
    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ws,
            });
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let (batch, ic, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (oc, kh, kw) = (ws[0], ws[2], ws[3]);
        if let Some(b) = bias {
            if self.shape(b) != [oc] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    lhs: self.shape(b).to_vec(),
                    rhs: vec![oc],
                });
            }
        }
        let oh = conv_out(h, kh, stride, padding)?;
        let ow = conv_out(wd, kw, stride, padding)?;
        let g = Geom {
            c: ic,
            h,
            w: wd,
            kh,
            kw,
            oh,
            ow,
            stride,
            padding,
        };
        let (ckk, n) = (ic * kh * kw, oh * ow);
        let mut cols = vec![0.0f32; batch * g.cols_len()];
        let mut out = vec![0.0f32; batch * oc * n];
        for b in 0..batch {
            let cols_b = &mut cols[b * g.cols_len()..(b + 1) * g.cols_len()];
            im2col(&self.data(x)[b * g.image_len()..(b + 1) * g.image_len()], &g, cols_b);
            sgemm(
                oc,
                ckk,
                n,
                1.0,
                self.data(w),
                false,
                cols_b,
                false,
                0.0,
                &mut out[b * oc * n..(b + 1) * oc * n],
            );
        }
        if let Some(bt) = bias {
            let bd = self.data(bt).to_vec();
            for b in 0..batch {
                for (c, &bv) in bd.iter().enumerate() {
                    for v in &mut out[(b * oc + c) * n..(b * oc + c + 1) * n] {
                        *v += bv;
                    }
                }
            }
        }
        let req = self.requires_grad(x)
            || self.requires_grad(w)
            || bias.map_or(false, |b| self.requires_grad(b));
        let keep_cols = self.requires_grad(w);
        self.push_result("conv2d", vec![batch, oc, oh, ow], out, req, move || {
            Op::Conv2d {
                x,
                w,
                bias,
                stride,
                padding,
                cols: keep_cols.then_some(cols),
            }
        })
    }

    /// Transposed 2D convolution. `x` is `[B,IC,H,W]`, `w` is
    /// `[IC,OC,KH,KW]`, `bias` is `[OC]`. Output spatial size is
    /// `(H-1)*s - 2p + KH`.
    pub fn conv2d_transpose(
        &mut self,
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[0] {
            return Err(Error::ShapeMismatch {
                op: "conv2d_transpose",
                lhs: xs,
                rhs: ws,
            });
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d_transpose", "stride must be positive"));
        }
        let (batch, ic, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (oc, kh, kw) = (ws[1], ws[2], ws[3]);
        if let Some(b) = bias {
            if self.shape(b) != [oc] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d_transpose",
                    lhs: self.shape(b).to_vec(),
                    rhs: vec![oc],
                });
            }
        }
        let out_extent = |e: usize, k: usize| -> Result<usize> {
            let grown = (e - 1) * stride + k;
            if grown <= 2 * padding {
                return Err(Error::invalid(
                    "conv2d_transpose",
                    format!("padding {padding} swallows the whole {grown} output"),
                ));
            }
            Ok(grown - 2 * padding)
        };
        let oh = out_extent(h, kh)?;
        let ow = out_extent(wd, kw)?;
        let g = Geom {
            c: oc,
            h: oh,
            w: ow,
            kh,
            kw,
            oh: h,
            ow: wd,
            stride,
            padding,
        };
        let (ckk, n) = (oc * kh * kw, h * wd);
        let mut cols = vec![0.0f32; g.cols_len()];
        let mut out = vec![0.0f32; batch * g.image_len()];
        for b in 0..batch {
            sgemm(
                ckk,
                ic,
                n,
                1.0,
                self.data(w),
                true,
                &self.data(x)[b * ic * n..(b + 1) * ic * n],
                false,
                0.0,
                &mut cols,
            );
            col2im(&cols, &g, &mut out[b * g.image_len()..(b + 1) * g.image_len()]);
        }
        if let Some(bt) = bias {
            let bd = self.data(bt).to_vec();
            let plane = oh * ow;
            for b in 0..batch {
                for (c, &bv) in bd.iter().enumerate() {
                    for v in &mut out[(b * oc + c) * plane..(b * oc + c + 1) * plane] {
                        *v += bv;
                    }
                }
            }
        }
        let req = self.requires_grad(x)
            || self.requires_grad(w)
            || bias.map_or(false, |b| self.requires_grad(b));
        self.push_result(
            "conv2d_transpose",
            vec![batch, oc, oh, ow],
            out,
            req,
            move || Op::ConvTranspose2d {
                x,
                w,
                bias,
                stride,
                padding,
            },
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward_conv2d(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    x: TensorId,
    w: TensorId,
    bias: Option<TensorId>,
    stride: usize,
    padding: usize,
    cols: &Option<Vec<f32>>,
    gout: &[f32],
) {
    let xs = &nodes[x.0].shape;
    let ws = &nodes[w.0].shape;
    let (batch, ic, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (oc, kh, kw) = (ws[0], ws[2], ws[3]);
    let g = Geom {
        c: ic,
        h,
        w: wd,
        kh,
        kw,
        oh: conv_out(h, kh, stride, padding).unwrap(),
        ow: conv_out(wd, kw, stride, padding).unwrap(),
        stride,
        padding,
    };
    let (ckk, n) = (ic * kh * kw, g.oh * g.ow);

    if nodes[w.0].requires_grad {
        let cols = cols.as_ref().expect("conv2d cached cols");
        let gw = grad_mut(grads, nodes, w);
        for b in 0..batch {
            sgemm(
                oc,
                n,
                ckk,
                1.0,
                &gout[b * oc * n..(b + 1) * oc * n],
                false,
                &cols[b * g.cols_len()..(b + 1) * g.cols_len()],
                true,
                1.0,
                gw,
            );
        }
    }
    if nodes[x.0].requires_grad {
        let wdata = &nodes[w.0].data;
        let mut dcols = vec![0.0f32; g.cols_len()];
        // Split borrow: gradient buffer for x, data for w.
        {
            let gx = grad_mut(grads, nodes, x);
            for b in 0..batch {
                sgemm(
                    ckk,
                    oc,
                    n,
                    1.0,
                    wdata,
                    true,
                    &gout[b * oc * n..(b + 1) * oc * n],
                    false,
                    0.0,
                    &mut dcols,
                );
                col2im(&dcols, &g, &mut gx[b * g.image_len()..(b + 1) * g.image_len()]);
            }
        }
    }
    if let Some(bt) = bias {
        if nodes[bt.0].requires_grad {
            let gb = grad_mut(grads, nodes, bt);
            for b in 0..batch {
                for c in 0..oc {
                    gb[c] += gout[(b * oc + c) * n..(b * oc + c + 1) * n].iter().sum::<f32>();
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward_conv2d_transpose(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    x: TensorId,
    w: TensorId,
    bias: Option<TensorId>,
    stride: usize,
    padding: usize,
    gout: &[f32],
) {
    let xs = &nodes[x.0].shape;
    let ws = &nodes[w.0].shape;
    let (batch, ic, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (oc, kh, kw) = (ws[1], ws[2], ws[3]);
    let (oh, ow) = ((h - 1) * stride + kh - 2 * padding, (wd - 1) * stride + kw - 2 * padding);
    let g = Geom {
        c: oc,
        h: oh,
        w: ow,
        kh,
        kw,
        oh: h,
        ow: wd,
        stride,
        padding,
    };
    let (ckk, n) = (oc * kh * kw, h * wd);
    let mut dcols = vec![0.0f32; g.cols_len()];
    for b in 0..batch {
        im2col(&gout[b * g.image_len()..(b + 1) * g.image_len()], &g, &mut dcols);
        if nodes[x.0].requires_grad {
            let wdata = &nodes[w.0].data;
            // sgemm writes the full m x n block, so accumulate via beta = 1.
            let gx = grad_mut(grads, nodes, x);
            sgemm(
                ic,
                ckk,
                n,
                1.0,
                wdata,
                false,
                &dcols,
                false,
                1.0,
                &mut gx[b * ic * n..(b + 1) * ic * n],
            );
        }
        if nodes[w.0].requires_grad {
            let xdata = &nodes[x.0].data[b * ic * n..(b + 1) * ic * n];
            let gw = grad_mut(grads, nodes, w);
            sgemm(ic, n, ckk, 1.0, xdata, false, &dcols, true, 1.0, gw);
        }
    }
    if let Some(bt) = bias {
        if nodes[bt.0].requires_grad {
            let plane = oh * ow;
            let gb = grad_mut(grads, nodes, bt);
            for b in 0..batch {
                for c in 0..oc {
                    gb[c] += gout[(b * oc + c) * plane..(b * oc + c + 1) * plane]
                        .iter()
                        .sum::<f32>();
                }
            }
        }
    }
}
