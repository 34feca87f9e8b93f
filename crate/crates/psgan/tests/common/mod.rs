//! Float64 reference stack shared by the integration tests.
//!
//! Everything here is independent of the tape: plain loops over `f64`
//! buffers, so gradient and semantics checks compare the engine against a
//! second implementation rather than against itself. The network mirrors
//! read parameters from a `ParamStore` by name and must be kept in
//! lockstep with the layer wiring in `generator.rs` / `discriminator.rs`.

#![allow(dead_code)] // each test binary uses a different subset

use psgan::discriminator::{Discriminator, DiscriminatorConfig, LEAKY_SLOPE};
use psgan::generator::{Generator, GeneratorConfig};
use psgan::mask::{Mask, MaskSet};
use psgan::norm::patched_adain;
use psgan::params::{Bindings, ParamStore};
use psgan::tensor::{Tape, TensorId, EPS};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS64: f64 = EPS as f64;

/// Dense rank-N tensor of f64 values.
#[derive(Debug, Clone)]
pub struct T64 {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl T64 {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_f32(shape: &[usize], data: &[f32]) -> Self {
        Self::new(shape, data.iter().map(|&v| v as f64).collect())
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> T64 {
        T64::new(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    fn dims4(&self) -> [usize; 4] {
        assert_eq!(self.shape.len(), 4, "expected rank 4, got {:?}", self.shape);
        [self.shape[0], self.shape[1], self.shape[2], self.shape[3]]
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Elementwise binary op with the engine's broadcast rule: equal rank,
/// each dim equal or 1 on one side.
pub fn binary64(a: &T64, b: &T64, f: impl Fn(f64, f64) -> f64) -> T64 {
    assert_eq!(a.shape.len(), b.shape.len(), "rank mismatch");
    let rank = a.shape.len();
    let mut out_shape = Vec::with_capacity(rank);
    for d in 0..rank {
        let (da, db) = (a.shape[d], b.shape[d]);
        assert!(da == db || da == 1 || db == 1, "incompatible dims {da} {db}");
        out_shape.push(da.max(db));
    }
    let (sa, sb) = (strides(&a.shape), strides(&b.shape));
    let n: usize = out_shape.iter().product();
    let mut out = vec![0.0; n];
    let mut idx = vec![0usize; rank];
    for v in out.iter_mut() {
        let mut ia = 0;
        let mut ib = 0;
        for d in 0..rank {
            ia += if a.shape[d] == 1 { 0 } else { idx[d] * sa[d] };
            ib += if b.shape[d] == 1 { 0 } else { idx[d] * sb[d] };
        }
        *v = f(a.data[ia], b.data[ib]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    T64::new(&out_shape, out)
}

pub fn add64(a: &T64, b: &T64) -> T64 {
    binary64(a, b, |x, y| x + y)
}

pub fn sub64(a: &T64, b: &T64) -> T64 {
    binary64(a, b, |x, y| x - y)
}

pub fn mul64(a: &T64, b: &T64) -> T64 {
    binary64(a, b, |x, y| x * y)
}

pub fn div64(a: &T64, b: &T64) -> T64 {
    binary64(a, b, |x, y| x / y)
}

pub fn relu64(a: &T64) -> T64 {
    a.map(|v| v.max(0.0))
}

pub fn leaky_relu64(a: &T64, slope: f64) -> T64 {
    a.map(|v| if v > 0.0 { v } else { slope * v })
}

pub fn tanh64(a: &T64) -> T64 {
    a.map(f64::tanh)
}

pub fn concat_channels64(a: &T64, b: &T64) -> T64 {
    let [ba, ca, h, w] = a.dims4();
    let [bb, cb, hb, wb] = b.dims4();
    assert_eq!((ba, h, w), (bb, hb, wb));
    let hw = h * w;
    let mut out = Vec::with_capacity((ca + cb) * ba * hw);
    for n in 0..ba {
        out.extend_from_slice(&a.data[n * ca * hw..(n + 1) * ca * hw]);
        out.extend_from_slice(&b.data[n * cb * hw..(n + 1) * cb * hw]);
    }
    T64::new(&[ba, ca + cb, h, w], out)
}

pub fn sum_keepdim64(x: &T64, dims: &[usize]) -> T64 {
    let rank = x.shape.len();
    let mut out_shape = x.shape.clone();
    for &d in dims {
        out_shape[d] = 1;
    }
    let so = strides(&out_shape);
    let mut out = vec![0.0; out_shape.iter().product()];
    let mut idx = vec![0usize; rank];
    for i in 0..x.numel() {
        let mut io = 0;
        for d in 0..rank {
            io += if out_shape[d] == 1 { 0 } else { idx[d] * so[d] };
        }
        out[io] += x.data[i];
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < x.shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    T64::new(&out_shape, out)
}

/// Population mean and `sqrt(var + EPS)` over `dims`, keeping dims.
pub fn moments64(x: &T64, dims: &[usize]) -> (T64, T64) {
    let n: f64 = dims.iter().map(|&d| x.shape[d] as f64).product();
    let mean = sum_keepdim64(x, dims).map(|v| v / n);
    let d = sub64(x, &mean);
    let d2 = mul64(&d, &d);
    let var = sum_keepdim64(&d2, dims).map(|v| v / n);
    let std = var.map(|v| (v + EPS64).sqrt());
    (mean, std)
}

/// Masked mean/std per (b,c): stats over pixels where `mask` is 1.
/// `mask` is `[B,1,H,W]` binary; matches `Tape::masked_moments`.
pub fn masked_moments64(x: &T64, mask: &T64) -> (T64, T64) {
    let [b, c, h, w] = x.dims4();
    assert_eq!(mask.shape, [b, 1, h, w]);
    let hw = h * w;
    let mut mean = vec![0.0; b * c];
    let mut std = vec![0.0; b * c];
    for n in 0..b {
        let m = &mask.data[n * hw..(n + 1) * hw];
        let cnt: f64 = m.iter().sum();
        assert!(cnt >= 2.0, "degenerate mask");
        for ch in 0..c {
            let xs = &x.data[(n * c + ch) * hw..(n * c + ch + 1) * hw];
            let mu: f64 = xs.iter().zip(m).map(|(&v, &mv)| v * mv).sum::<f64>() / cnt;
            let var: f64 = xs
                .iter()
                .zip(m)
                .map(|(&v, &mv)| {
                    let d = (v - mu) * mv;
                    d * d
                })
                .sum::<f64>()
                / cnt;
            mean[n * c + ch] = mu;
            std[n * c + ch] = (var + EPS64).sqrt();
        }
    }
    (
        T64::new(&[b, c, 1, 1], mean),
        T64::new(&[b, c, 1, 1], std),
    )
}

/// Instance norm over [2,3] with optional per-channel affine.
pub fn instance_norm64(x: &T64, gamma: Option<&[f64]>, beta: Option<&[f64]>) -> T64 {
    let c = x.shape[1];
    let (mean, std) = moments64(x, &[2, 3]);
    let mut y = div64(&sub64(x, &mean), &std);
    if let Some(g) = gamma {
        assert_eq!(g.len(), c);
        y = mul64(&y, &T64::new(&[1, c, 1, 1], g.to_vec()));
    }
    if let Some(be) = beta {
        assert_eq!(be.len(), c);
        y = add64(&y, &T64::new(&[1, c, 1, 1], be.to_vec()));
    }
    y
}

/// Region-wise AdaIn mirroring `norm::patched_adain`: every region mask is
/// a patch, plus the background complement when it has ≥ 2 active pixels.
pub fn patched_adain64(x: &T64, s: &T64, masks: &MaskSet) -> T64 {
    let [b, _, h, w] = x.dims4();
    assert_eq!(b, 1);
    assert_eq!(s.shape, x.shape);
    assert_eq!((masks.h(), masks.w()), (h, w));
    let mut patches: Vec<&Mask> = masks.iter().collect();
    let background = masks.background();
    match background.active() {
        0 => {}
        1 => panic!("degenerate background"),
        _ => patches.push(&background),
    }
    let mut out = T64::new(&x.shape, vec![0.0; x.numel()]);
    for mask in patches {
        let m = T64::from_f32(&[1, 1, h, w], mask.data());
        let (mx, sx) = masked_moments64(x, &m);
        let (ms, ss) = masked_moments64(s, &m);
        let normed = div64(&sub64(x, &mx), &sx);
        let styled = add64(&mul64(&normed, &ss), &ms);
        out = add64(&out, &mul64(&styled, &m));
    }
    out
}

/// Convolution matching `Tape::conv2d`: zero padding, `w` is `[OC,IC,KH,KW]`,
/// bias `[OC]`.
pub fn conv2d64(x: &T64, w: &T64, bias: Option<&T64>, stride: usize, pad: usize) -> T64 {
    let [b, ic, h, wd] = x.dims4();
    let [oc, ic2, kh, kw] = w.dims4();
    assert_eq!(ic, ic2);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; b * oc * oh * ow];
    for n in 0..b {
        for o in 0..oc {
            let b0 = bias.map_or(0.0, |bv| bv.data[o]);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b0;
                    for i in 0..ic {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data[((n * ic + i) * h + iy as usize) * wd + ix as usize]
                                    * w.data[((o * ic2 + i) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((n * oc + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    T64::new(&[b, oc, oh, ow], out)
}

/// Transposed convolution matching `Tape::conv2d_transpose`: `w` is
/// `[IC,OC,KH,KW]`, output `(H-1)*s - 2p + K`.
pub fn conv2d_transpose64(x: &T64, w: &T64, bias: Option<&T64>, stride: usize, pad: usize) -> T64 {
    let [b, ic, h, wd] = x.dims4();
    let [ic2, oc, kh, kw] = w.dims4();
    assert_eq!(ic, ic2);
    let oh = (h - 1) * stride + kh - 2 * pad;
    let ow = (wd - 1) * stride + kw - 2 * pad;
    let mut out = vec![0.0; b * oc * oh * ow];
    for n in 0..b {
        for o in 0..oc {
            if let Some(bv) = bias {
                let v = bv.data[o];
                for p in out[(n * oc + o) * oh * ow..(n * oc + o + 1) * oh * ow].iter_mut() {
                    *p += v;
                }
            }
        }
        for i in 0..ic {
            for iy in 0..h {
                for ix in 0..wd {
                    let xv = x.data[((n * ic + i) * h + iy) * wd + ix];
                    for o in 0..oc {
                        for ky in 0..kh {
                            let oy = (iy * stride + ky) as isize - pad as isize;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ox = (ix * stride + kx) as isize - pad as isize;
                                if ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                out[((n * oc + o) * oh + oy as usize) * ow + ox as usize] +=
                                    xv * w.data[((i * oc + o) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    T64::new(&[b, oc, oh, ow], out)
}

/// Mean absolute difference, as `Tape::l1_loss`.
pub fn l1_64(a: &T64, b: &T64) -> f64 {
    assert_eq!(a.shape, b.shape);
    a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y).abs())
        .sum::<f64>()
        / a.numel() as f64
}

/// Mean binary cross-entropy with logits against a constant target.
pub fn bce64(z: &T64, t: f64) -> f64 {
    z.data
        .iter()
        .map(|&v| v.max(0.0) - v * t + (-v.abs()).exp().ln_1p())
        .sum::<f64>()
        / z.numel() as f64
}

// ---------------------------------------------------------------------------
// Network mirrors, reading parameters from the store by name.

fn pdata(store: &ParamStore, name: &str) -> T64 {
    let id = store
        .lookup(name)
        .unwrap_or_else(|| panic!("missing param {name}"));
    let p = store.get(id);
    T64::from_f32(p.shape(), p.data())
}

fn affine(store: &ParamStore, name: &str) -> (Vec<f64>, Vec<f64>) {
    (pdata(store, &format!("{name}.g")).data, pdata(store, &format!("{name}.b")).data)
}

fn conv_in_relu(store: &ParamStore, conv: &str, norm: &str, x: &T64, stride: usize, pad: usize) -> T64 {
    let w = pdata(store, &format!("{conv}.w"));
    let y = conv2d64(x, &w, None, stride, pad);
    let (g, b) = affine(store, norm);
    relu64(&instance_norm64(&y, Some(&g), Some(&b)))
}

/// Mirror of `Generator::forward` in eval mode (dropout disabled).
pub fn generator64(
    store: &ParamStore,
    cfg: &GeneratorConfig,
    prefix: &str,
    content: &T64,
    style: &T64,
    masks: &MaskSet,
) -> T64 {
    let mut mask_pyramid = Vec::with_capacity(cfg.n_downsamples);
    for i in 0..cfg.n_downsamples {
        mask_pyramid.push(masks.downsample(1 << (i + 1)).unwrap());
    }
    let deep_masks = if cfg.n_downsamples == 0 {
        masks.downsample(1).unwrap()
    } else {
        mask_pyramid[cfg.n_downsamples - 1].clone()
    };

    // Style pyramid: features after each downsample, bottleneck last.
    let mut s = conv_in_relu(
        store,
        &format!("{prefix}.style.stem"),
        &format!("{prefix}.style.stem_norm"),
        style,
        1,
        3,
    );
    let mut pyramid = Vec::with_capacity(cfg.n_downsamples + 1);
    for i in 0..cfg.n_downsamples {
        s = conv_in_relu(
            store,
            &format!("{prefix}.style.down{i}"),
            &format!("{prefix}.style.down{i}_norm"),
            &s,
            2,
            1,
        );
        pyramid.push(s.clone());
    }
    let mut h = conv_in_relu(
        store,
        &format!("{prefix}.style.res.conv1"),
        &format!("{prefix}.style.res.norm1"),
        &s,
        1,
        1,
    );
    h = conv2d64(&h, &pdata(store, &format!("{prefix}.style.res.conv2.w")), None, 1, 1);
    let (g, b) = affine(store, &format!("{prefix}.style.res.norm2"));
    h = instance_norm64(&h, Some(&g), Some(&b));
    s = add64(&s, &h);
    pyramid.push(s);

    let mut x = conv_in_relu(
        store,
        &format!("{prefix}.stem"),
        &format!("{prefix}.stem_norm"),
        content,
        1,
        3,
    );
    for i in 0..cfg.n_downsamples {
        let w = pdata(store, &format!("{prefix}.down{i}.w"));
        x = conv2d64(&x, &w, None, 2, 1);
        x = patched_adain64(&x, &pyramid[i], &mask_pyramid[i]);
        x = relu64(&x);
    }
    let deep_style = &pyramid[cfg.n_downsamples];
    for i in 0..cfg.n_resblocks {
        let mut h = conv_in_relu(
            store,
            &format!("{prefix}.res{i}.conv1"),
            &format!("{prefix}.res{i}.norm1"),
            &x,
            1,
            1,
        );
        h = conv2d64(&h, &pdata(store, &format!("{prefix}.res{i}.conv2.w")), None, 1, 1);
        h = patched_adain64(&h, deep_style, &deep_masks);
        x = add64(&x, &h);
    }
    for i in 0..cfg.n_downsamples {
        let w = pdata(store, &format!("{prefix}.up{i}.w"));
        x = conv2d_transpose64(&x, &w, None, 2, 1);
        let (g, b) = affine(store, &format!("{prefix}.up{i}_norm"));
        x = relu64(&instance_norm64(&x, Some(&g), Some(&b)));
    }
    let w = pdata(store, &format!("{prefix}.head.w"));
    let bias = pdata(store, &format!("{prefix}.head.b"));
    tanh64(&conv2d64(&x, &w, Some(&bias), 1, 3))
}

/// Mirror of `Discriminator::forward`.
pub fn discriminator64(
    store: &ParamStore,
    cfg: &DiscriminatorConfig,
    prefix: &str,
    image: &T64,
    content: &T64,
) -> T64 {
    let mut x = concat_channels64(image, content);
    for i in 0..cfg.n_layers {
        let w = pdata(store, &format!("{prefix}.conv{i}.w"));
        if i == 0 {
            let b = pdata(store, &format!("{prefix}.conv{i}.b"));
            x = conv2d64(&x, &w, Some(&b), 2, 1);
        } else {
            x = conv2d64(&x, &w, None, 2, 1);
            let (g, b) = affine(store, &format!("{prefix}.conv{i}_norm"));
            x = instance_norm64(&x, Some(&g), Some(&b));
        }
        x = leaky_relu64(&x, LEAKY_SLOPE as f64);
    }
    let w = pdata(store, &format!("{prefix}.head.w"));
    let b = pdata(store, &format!("{prefix}.head.b"));
    conv2d64(&x, &w, Some(&b), 1, 1)
}

// ---------------------------------------------------------------------------
// Finite differences.

/// Central-difference gradient of `eval` at `base`, one coordinate at a time.
pub fn fd_grad(base: &[f64], h: f64, mut eval: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = base.to_vec();
    let mut g = vec![0.0; base.len()];
    for i in 0..base.len() {
        x[i] = base[i] + h;
        let lp = eval(&x);
        x[i] = base[i] - h;
        let lm = eval(&x);
        x[i] = base[i];
        g[i] = (lp - lm) / (2.0 * h);
    }
    g
}

pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Worst relative error between analytic (f32) and numeric (f64) gradients.
pub fn max_rel_err(analytic: &[f32], numeric: &[f64], floor: f64) -> (f64, usize) {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = (0.0, 0);
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = rel_err(a as f64, n, floor);
        if e > worst.0 {
            worst = (e, i);
        }
    }
    worst
}

pub fn assert_grads_close(analytic: &[f32], numeric: &[f64], rtol: f64, floor: f64, what: &str) {
    let (err, i) = max_rel_err(analytic, numeric, floor);
    assert!(
        err <= rtol,
        "{what}: rel err {err:.3e} at coord {i} (analytic {}, numeric {})",
        analytic[i],
        numeric[i]
    );
}

// ---------------------------------------------------------------------------
// Seeded data helpers.

/// Uniform values in `[lo, hi)`.
pub fn uniform(rng: &mut impl Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Uniform magnitudes in `[0.1, 1.1)` with random sign: keeps relu/abs
/// kinks at least 0.1 away so finite differences stay one-sided.
pub fn off_kink(rng: &mut impl Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1f32..1.1);
            if rng.gen_bool(0.5) {
                -m
            } else {
                m
            }
        })
        .collect()
}

/// Projection coefficients bounded away from zero so every output
/// coordinate contributes to the scalar loss.
pub fn coeffs(rng: &mut impl Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(0.25f32..1.0);
            if rng.gen_bool(0.5) {
                -m
            } else {
                m
            }
        })
        .collect()
}

pub fn dot64(a: &[f64], c: &[f32]) -> f64 {
    a.iter().zip(c).map(|(&x, &w)| x * w as f64).sum()
}

/// Two disjoint rectangles on a 16×16 grid; survives one downsample.
pub fn two_region_masks_16() -> MaskSet {
    let mut m0 = Mask::zeros(16, 16);
    for y in 2..8 {
        for x in 2..8 {
            m0.set(y, x, true);
        }
    }
    let mut m1 = Mask::zeros(16, 16);
    for y in 9..14 {
        for x in 9..14 {
            m1.set(y, x, true);
        }
    }
    MaskSet::new(16, 16, vec![m0, m1]).unwrap()
}

// ---------------------------------------------------------------------------
// Gradient-check batteries, shared between the per-op test suite and the
// acceptance gate.

pub const FD_H: f64 = 1e-3;
pub const PER_OP_RTOL: f64 = 1e-3;
pub const PER_OP_FLOOR: f64 = 1e-4;
pub const E2E_RTOL: f64 = 1e-2;
pub const E2E_FLOOR: f64 = 1e-3;

/// Runs `tape_op` over leaf inputs, projects the output to a scalar with
/// fixed coefficients, backprops, and compares every leaf gradient against
/// central differences of `ref_op`.
pub fn check_op(
    name: &str,
    seed: u64,
    inputs: &[(&[usize], Vec<f32>)],
    tape_op: impl Fn(&mut Tape, &[TensorId]) -> TensorId,
    ref_op: impl Fn(&[T64]) -> T64,
) {
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|(shape, data)| tape.leaf(shape, data.clone()).unwrap())
        .collect();
    let y = tape_op(&mut tape, &ids);
    let yshape = tape.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = coeffs(&mut rng, yshape.iter().product());
    let cid = tape.constant(&yshape, c.clone()).unwrap();
    let prod = tape.mul(y, cid).unwrap();
    let dims: Vec<usize> = (0..yshape.len()).collect();
    let loss = tape.sum_keepdim(prod, &dims).unwrap();
    tape.backward(loss).unwrap();

    let bases: Vec<T64> = inputs.iter().map(|(s, d)| T64::from_f32(s, d)).collect();
    for (i, (shape, data)) in inputs.iter().enumerate() {
        let analytic = tape.grad(ids[i]).expect("leaf grad").to_vec();
        let base: Vec<f64> = data.iter().map(|&v| v as f64).collect();
        let fd = fd_grad(&base, FD_H, |xp| {
            let mut t: Vec<T64> = bases.clone();
            t[i] = T64::new(shape, xp.to_vec());
            dot64(&ref_op(&t).data, &c)
        });
        assert_grads_close(
            &analytic,
            &fd,
            PER_OP_RTOL,
            PER_OP_FLOOR,
            &format!("{name} input {i}"),
        );
    }
}

pub fn check_binary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let full: &[usize] = &[2, 3, 4, 4];
    let chan: &[usize] = &[1, 3, 1, 1];
    let a = uniform(&mut rng, 96, -1.0, 1.0);
    let b = uniform(&mut rng, 96, -1.0, 1.0);
    let bc = uniform(&mut rng, 3, -1.0, 1.0);
    // Divisors bounded away from zero.
    let d: Vec<f32> = off_kink(&mut rng, 96).iter().map(|v| v + v.signum() * 0.5).collect();
    let dc: Vec<f32> = off_kink(&mut rng, 3).iter().map(|v| v + v.signum() * 0.5).collect();

    for (name, op) in [("add", 0usize), ("sub", 1), ("mul", 2), ("div", 3)] {
        let (rhs_full, rhs_chan) = if op == 3 { (&d, &dc) } else { (&b, &bc) };
        let apply = move |t: &mut Tape, x: TensorId, y: TensorId| match op {
            0 => t.add(x, y).unwrap(),
            1 => t.sub(x, y).unwrap(),
            2 => t.mul(x, y).unwrap(),
            _ => t.div(x, y).unwrap(),
        };
        let apply64 = move |x: &T64, y: &T64| match op {
            0 => add64(x, y),
            1 => sub64(x, y),
            2 => mul64(x, y),
            _ => div64(x, y),
        };
        check_op(
            &format!("{name} same-shape"),
            10 + op as u64,
            &[(full, a.clone()), (full, rhs_full.clone())],
            |t, ids| apply(t, ids[0], ids[1]),
            |t| apply64(&t[0], &t[1]),
        );
        check_op(
            &format!("{name} channel-broadcast"),
            20 + op as u64,
            &[(full, a.clone()), (chan, rhs_chan.clone())],
            |t, ids| apply(t, ids[0], ids[1]),
            |t| apply64(&t[0], &t[1]),
        );
    }
}

pub fn check_scalar_and_smooth_unary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shape: &[usize] = &[1, 2, 5, 5];
    let x = uniform(&mut rng, 50, -2.0, 2.0);
    check_op(
        "scale",
        30,
        &[(shape, x.clone())],
        |t, ids| t.scale(ids[0], 0.7).unwrap(),
        |t| t[0].map(|v| v * 0.7f32 as f64),
    );
    check_op(
        "add_scalar",
        31,
        &[(shape, x.clone())],
        |t, ids| t.add_scalar(ids[0], -0.3).unwrap(),
        |t| t[0].map(|v| v + (-0.3f32) as f64),
    );
    check_op(
        "tanh",
        32,
        &[(shape, x)],
        |t, ids| t.tanh(ids[0]).unwrap(),
        |t| tanh64(&t[0]),
    );
    let pos = uniform(&mut rng, 50, 0.3, 2.0);
    check_op(
        "sqrt",
        33,
        &[(shape, pos)],
        |t, ids| t.sqrt(ids[0]).unwrap(),
        |t| t[0].map(f64::sqrt),
    );
}

pub fn check_relu_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape: &[usize] = &[2, 2, 4, 4];
    let x = off_kink(&mut rng, 64);
    check_op(
        "relu",
        40,
        &[(shape, x.clone())],
        |t, ids| t.relu(ids[0]).unwrap(),
        |t| relu64(&t[0]),
    );
    check_op(
        "leaky_relu",
        41,
        &[(shape, x)],
        |t, ids| t.leaky_relu(ids[0], 0.2).unwrap(),
        |t| leaky_relu64(&t[0], 0.2f32 as f64),
    );
}

pub fn check_concat_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = uniform(&mut rng, 2 * 9, -1.0, 1.0);
    let b = uniform(&mut rng, 3 * 9, -1.0, 1.0);
    check_op(
        "concat_channels",
        50,
        &[(&[1, 2, 3, 3], a), (&[1, 3, 3, 3], b)],
        |t, ids| t.concat_channels(ids[0], ids[1]).unwrap(),
        |t| concat_channels64(&t[0], &t[1]),
    );
}

pub fn check_sum_keepdim() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shape: &[usize] = &[2, 3, 4, 4];
    let x = uniform(&mut rng, 96, -1.0, 1.0);
    for (i, dims) in [vec![2, 3], vec![0, 2, 3], vec![1]].into_iter().enumerate() {
        let d2 = dims.clone();
        check_op(
            &format!("sum_keepdim {dims:?}"),
            60 + i as u64,
            &[(shape, x.clone())],
            |t, ids| t.sum_keepdim(ids[0], &dims).unwrap(),
            |t| sum_keepdim64(&t[0], &d2),
        );
    }
}

pub fn check_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let shape: &[usize] = &[2, 3, 4, 4];
    let x = uniform(&mut rng, 96, -1.0, 1.0);
    for (i, dims) in [vec![2, 3], vec![0, 2, 3]].into_iter().enumerate() {
        let d2 = dims.clone();
        check_op(
            &format!("moments {dims:?}"),
            70 + i as u64,
            &[(shape, x.clone())],
            |t, ids| {
                let (m, s) = t.moments(ids[0], &dims).unwrap();
                t.concat_channels(m, s).unwrap()
            },
            |t| {
                let (m, s) = moments64(&t[0], &d2);
                concat_channels64(&m, &s)
            },
        );
    }
}

pub fn check_masked_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shape: &[usize] = &[1, 3, 6, 6];
    let x = uniform(&mut rng, 108, -1.0, 1.0);
    // Fixed binary mask with 14 active pixels.
    let mut mask = vec![0.0f32; 36];
    for i in [0, 1, 5, 7, 8, 12, 14, 18, 20, 23, 27, 30, 33, 35] {
        mask[i] = 1.0;
    }
    let m64 = T64::from_f32(&[1, 1, 6, 6], &mask);
    check_op(
        "masked_moments",
        80,
        &[(shape, x)],
        |t, ids| {
            let m = t.constant(&[1, 1, 6, 6], mask.clone()).unwrap();
            let (mean, std) = t.masked_moments(ids[0], m).unwrap();
            t.concat_channels(mean, std).unwrap()
        },
        |t| {
            let (mean, std) = masked_moments64(&t[0], &m64);
            concat_channels64(&mean, &std)
        },
    );
}

pub fn check_conv2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = uniform(&mut rng, 3 * 64, -1.0, 1.0);
    let w = uniform(&mut rng, 4 * 3 * 9, -0.5, 0.5);
    let b = uniform(&mut rng, 4, -0.5, 0.5);
    check_op(
        "conv2d k3 s1 p1",
        90,
        &[(&[1, 3, 8, 8], x.clone()), (&[4, 3, 3, 3], w), (&[4], b)],
        |t, ids| t.conv2d(ids[0], ids[1], Some(ids[2]), 1, 1).unwrap(),
        |t| conv2d64(&t[0], &t[1], Some(&t[2]), 1, 1),
    );
    let w4 = uniform(&mut rng, 4 * 3 * 16, -0.5, 0.5);
    check_op(
        "conv2d k4 s2 p1",
        91,
        &[(&[1, 3, 8, 8], x), (&[4, 3, 4, 4], w4)],
        |t, ids| t.conv2d(ids[0], ids[1], None, 2, 1).unwrap(),
        |t| conv2d64(&t[0], &t[1], None, 2, 1),
    );
}

pub fn check_conv2d_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = uniform(&mut rng, 4 * 25, -1.0, 1.0);
    let w = uniform(&mut rng, 4 * 3 * 16, -0.5, 0.5);
    let b = uniform(&mut rng, 3, -0.5, 0.5);
    check_op(
        "conv2d_transpose k4 s2 p1",
        100,
        &[(&[1, 4, 5, 5], x), (&[4, 3, 4, 4], w), (&[3], b)],
        |t, ids| {
            t.conv2d_transpose(ids[0], ids[1], Some(ids[2]), 2, 1)
                .unwrap()
        },
        |t| conv2d_transpose64(&t[0], &t[1], Some(&t[2]), 2, 1),
    );
}

pub fn check_patched_adain_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shape: &[usize] = &[1, 4, 16, 16];
    let x = uniform(&mut rng, 4 * 256, -1.0, 1.0);
    let s = uniform(&mut rng, 4 * 256, -1.0, 1.0);
    let masks = two_region_masks_16();
    let m2 = masks.clone();
    check_op(
        "patched_adain",
        110,
        &[(shape, x), (shape, s)],
        |t, ids| patched_adain(t, ids[0], ids[1], &masks).unwrap(),
        move |t| patched_adain64(&t[0], &t[1], &m2),
    );
}

pub fn check_l1_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let shape: &[usize] = &[1, 3, 5, 5];
    let a = uniform(&mut rng, 75, -1.0, 1.0);
    // Keep |a - b| >= 0.05 so the abs kink stays out of FD reach.
    let b: Vec<f32> = a
        .iter()
        .zip(off_kink(&mut rng, 75))
        .map(|(&av, d)| av + 0.5 * d)
        .collect();
    check_op(
        "l1_loss",
        120,
        &[(shape, a), (shape, b)],
        |t, ids| t.l1_loss(ids[0], ids[1]).unwrap(),
        |t| T64::new(&[1], vec![l1_64(&t[0], &t[1])]),
    );
}

pub fn check_bce_with_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let shape: &[usize] = &[1, 1, 4, 4];
    let z = uniform(&mut rng, 16, -2.0, 2.0);
    for target in [0.0f32, 1.0] {
        check_op(
            &format!("bce_with_logits t={target}"),
            130,
            &[(shape, z.clone())],
            |t, ids| {
                let tid = t.full(&[1, 1, 4, 4], target).unwrap();
                t.bce_with_logits(ids[0], tid).unwrap()
            },
            |t| T64::new(&[1], vec![bce64(&t[0], target as f64)]),
        );
    }
}

/// Runs every per-op gradient check.
pub fn check_all_ops() {
    check_binary_ops();
    check_scalar_and_smooth_unary_ops();
    check_relu_family();
    check_concat_channels();
    check_sum_keepdim();
    check_moments();
    check_masked_moments();
    check_conv2d();
    check_conv2d_transpose();
    check_patched_adain_grads();
    check_l1_loss();
    check_bce_with_logits();
}

/// Full pix2pix-style objective at 16×16: analytic parameter gradients vs
/// f64 central differences at sampled coordinates of every parameter.
pub fn check_end_to_end_grads() {
    let gcfg = GeneratorConfig {
        image_size: 16,
        base_channels: 8,
        n_downsamples: 1,
        n_resblocks: 1,
        dropout: 0.0,
    };
    let dcfg = DiscriminatorConfig {
        base_channels: 8,
        n_layers: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut store_g = ParamStore::new();
    let mut store_d = ParamStore::new();
    let generator = Generator::new(&mut store_g, gcfg, &mut rng, "g").unwrap();
    let discriminator = Discriminator::new(&mut store_d, dcfg, &mut rng, "d").unwrap();

    let masks = two_region_masks_16();
    let n = 3 * 16 * 16;
    let content = uniform(&mut rng, n, -0.9, 0.9);
    let style = uniform(&mut rng, n, -0.9, 0.9);
    let target = uniform(&mut rng, n, -0.9, 0.9);
    let content64 = T64::from_f32(&[1, 3, 16, 16], &content);
    let style64 = T64::from_f32(&[1, 3, 16, 16], &style);
    let target64 = T64::from_f32(&[1, 3, 16, 16], &target);

    // Analytic pass.
    let mut tape = Tape::new();
    let mut binds_g = Bindings::trainable();
    let mut binds_d = Bindings::trainable();
    let cid = tape.constant(&[1, 3, 16, 16], content.clone()).unwrap();
    let sid = tape.constant(&[1, 3, 16, 16], style.clone()).unwrap();
    let tid = tape.constant(&[1, 3, 16, 16], target.clone()).unwrap();
    let mut fwd_rng = ChaCha8Rng::seed_from_u64(0);
    let fake = generator
        .forward(
            &mut tape, &mut binds_g, &store_g, cid, sid, &masks, false, &mut fwd_rng,
        )
        .unwrap();
    let logits = discriminator
        .forward(&mut tape, &mut binds_d, &store_d, fake, cid)
        .unwrap();
    let lshape = tape.shape(logits).to_vec();
    let ones = tape.full(&lshape, 1.0).unwrap();
    let adv = tape.bce_with_logits(logits, ones).unwrap();
    let l1 = tape.l1_loss(fake, tid).unwrap();
    let loss = tape.add(adv, l1).unwrap();
    tape.backward(loss).unwrap();
    binds_g.harvest(&tape, &mut store_g).unwrap();
    binds_d.harvest(&tape, &mut store_d).unwrap();

    let loss64 = |sg: &ParamStore, sd: &ParamStore| -> f64 {
        let fake = generator64(sg, &gcfg, "g", &content64, &style64, &masks);
        let logits = discriminator64(sd, &dcfg, "d", &fake, &content64);
        bce64(&logits, 1.0) + l1_64(&fake, &target64)
    };
    // The mirror must agree with the engine's forward pass before its
    // finite differences mean anything.
    let base = loss64(&store_g, &store_d);
    let engine = tape.data(loss)[0] as f64;
    assert!(
        (base - engine).abs() <= 1e-4 * engine.abs().max(1.0),
        "f64 mirror loss {base} disagrees with engine loss {engine}"
    );

    // Step small enough that relu kinks are rarely crossed inside the FD
    // interval; crossings scale with h and the per-crossing error with h²,
    // while the f64 evaluation keeps the difference quotient exact.
    let h = 1e-4;
    let mut coord_rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0usize;
    for which in 0..2 {
        let params: Vec<(String, usize)> = {
            let store = if which == 0 { &store_g } else { &store_d };
            store
                .iter()
                .map(|p| (p.name().to_string(), p.data().len()))
                .collect()
        };
        let set = |sg: &mut ParamStore, sd: &mut ParamStore, name: &str, idx: usize, v: f32| {
            let store = if which == 0 { sg } else { sd };
            let id = store.lookup(name).unwrap();
            store.get_mut(id).data_mut()[idx] = v;
            store.get(id).data()[idx] as f64
        };
        for (name, numel) in params {
            let k = numel.min(4);
            for _ in 0..k {
                let idx = coord_rng.gen_range(0..numel);
                let (old, analytic) = {
                    let store = if which == 0 { &store_g } else { &store_d };
                    let id = store.lookup(&name).unwrap();
                    (store.get(id).data()[idx], store.get(id).grad()[idx])
                };

                let up = set(&mut store_g, &mut store_d, &name, idx, old + h as f32);
                let lp = loss64(&store_g, &store_d);
                let down = set(&mut store_g, &mut store_d, &name, idx, old - h as f32);
                let lm = loss64(&store_g, &store_d);
                set(&mut store_g, &mut store_d, &name, idx, old);

                let fd = (lp - lm) / (up - down);
                let err = rel_err(analytic as f64, fd, E2E_FLOOR);
                assert!(
                    err <= E2E_RTOL,
                    "{name}[{idx}]: rel err {err:.3e} (analytic {analytic}, fd {fd})"
                );
                checked += 1;
            }
        }
    }
    assert!(checked >= 100, "only {checked} coordinates sampled");
}
