//! Style-conditioned generator: encoder, conditioned residual blocks,
//! decoder, and the style branch that feeds every patched-AdaIN site.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mask::MaskSet;
use crate::norm::{instance_norm, patched_adain};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::{Tape, TensorId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    /// Square input/output size in pixels.
    pub image_size: usize,
    /// Channels after the stem convolution.
    pub base_channels: usize,
    /// Stride-2 stages in the encoder (and mirrored in the decoder).
    pub n_downsamples: usize,
    /// Conditioned residual blocks at the bottleneck.
    pub n_resblocks: usize,
    /// Dropout probability inside residual blocks (training mode only).
    pub dropout: f32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            base_channels: 32,
            n_downsamples: 2,
            n_resblocks: 6,
            dropout: 0.5,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.base_channels == 0 {
            return Err(Error::InvalidConfig(
                "image_size and base_channels must be positive".into(),
            ));
        }
        let factor = 1usize << self.n_downsamples;
        if self.image_size % factor != 0 || self.image_size / factor < 4 {
            return Err(Error::InvalidConfig(format!(
                "image_size {} incompatible with {} downsamples",
                self.image_size, self.n_downsamples
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout {} not in [0,1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

struct Conv {
    w: ParamId,
    /// Absent on convs feeding a normalization layer: the norm would
    /// subtract any per-channel constant, leaving the bias with an exactly
    /// zero gradient forever.
    b: Option<ParamId>,
    stride: usize,
    padding: usize,
}

struct Affine {
    g: ParamId,
    b: ParamId,
    c: usize,
}

struct ResBlock {
    conv1: Conv,
    norm1: Affine,
    conv2: Conv,
}

struct StyleResBlock {
    conv1: Conv,
    norm1: Affine,
    conv2: Conv,
    norm2: Affine,
}

pub struct Generator {
    cfg: GeneratorConfig,
    stem: Conv,
    stem_norm: Affine,
    down: Vec<Conv>,
    res: Vec<ResBlock>,
    up: Vec<(Conv, Affine)>,
    head: Conv,
    style_stem: Conv,
    style_stem_norm: Affine,
    style_down: Vec<(Conv, Affine)>,
    style_res: StyleResBlock,
}

#[allow(clippy::too_many_arguments)]
fn add_conv(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    oc: usize,
    ic: usize,
    k: usize,
    stride: usize,
    padding: usize,
    bias: bool,
) -> Result<Conv> {
    Ok(Conv {
        w: store.add_normal(format!("{name}.w"), &[oc, ic, k, k], rng)?,
        b: bias
            .then(|| store.add_full(format!("{name}.b"), &[oc], 0.0))
            .transpose()?,
        stride,
        padding,
    })
}

/// Transposed conv: weight is laid out `[IC, OC, K, K]`.
#[allow(clippy::too_many_arguments)]
fn add_deconv(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    oc: usize,
    ic: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<Conv> {
    Ok(Conv {
        w: store.add_normal(format!("{name}.w"), &[ic, oc, k, k], rng)?,
        b: None,
        stride,
        padding,
    })
}

fn add_affine(store: &mut ParamStore, name: &str, c: usize) -> Result<Affine> {
    Ok(Affine {
        g: store.add_full(format!("{name}.g"), &[c], 1.0)?,
        b: store.add_full(format!("{name}.b"), &[c], 0.0)?,
        c,
    })
}

impl Conv {
    fn apply(
        &self,
        tape: &mut Tape,
        binds: &mut Bindings,
        store: &ParamStore,
        x: TensorId,
    ) -> Result<TensorId> {
        let w = binds.bind(tape, store, self.w)?;
        let b = self.b.map(|b| binds.bind(tape, store, b)).transpose()?;
        tape.conv2d(x, w, b, self.stride, self.padding)
    }

    fn apply_transpose(
        &self,
        tape: &mut Tape,
        binds: &mut Bindings,
        store: &ParamStore,
        x: TensorId,
    ) -> Result<TensorId> {
        let w = binds.bind(tape, store, self.w)?;
        let b = self.b.map(|b| binds.bind(tape, store, b)).transpose()?;
        tape.conv2d_transpose(x, w, b, self.stride, self.padding)
    }
}

impl Affine {
    fn instance_norm(
        &self,
        tape: &mut Tape,
        binds: &mut Bindings,
        store: &ParamStore,
        x: TensorId,
    ) -> Result<TensorId> {
        let g = binds.bind_as(tape, store, self.g, &[1, self.c, 1, 1])?;
        let b = binds.bind_as(tape, store, self.b, &[1, self.c, 1, 1])?;
        instance_norm(tape, x, Some(g), Some(b))
    }
}

impl Generator {
    /// Registers all parameters under `prefix` (e.g. "g") and fixes their
    /// order, which the checkpoint format relies on.
    pub fn new(
        store: &mut ParamStore,
        cfg: GeneratorConfig,
        rng: &mut ChaCha8Rng,
        prefix: &str,
    ) -> Result<Self> {
        cfg.validate()?;
        let base = cfg.base_channels;
        let stem = add_conv(store, rng, &format!("{prefix}.stem"), base, 3, 7, 1, 3, false)?;
        let stem_norm = add_affine(store, &format!("{prefix}.stem_norm"), base)?;

        let mut down = Vec::new();
        let mut ch = base;
        for i in 0..cfg.n_downsamples {
            down.push(add_conv(
                store,
                rng,
                &format!("{prefix}.down{i}"),
                ch * 2,
                ch,
                3,
                2,
                1,
                false,
            )?);
            ch *= 2;
        }

        let mut res = Vec::new();
        for i in 0..cfg.n_resblocks {
            res.push(ResBlock {
                conv1: add_conv(store, rng, &format!("{prefix}.res{i}.conv1"), ch, ch, 3, 1, 1, false)?,
                norm1: add_affine(store, &format!("{prefix}.res{i}.norm1"), ch)?,
                conv2: add_conv(store, rng, &format!("{prefix}.res{i}.conv2"), ch, ch, 3, 1, 1, false)?,
            });
        }

        let mut up = Vec::new();
        for i in 0..cfg.n_downsamples {
            let deconv = add_deconv(
                store,
                rng,
                &format!("{prefix}.up{i}"),
                ch / 2,
                ch,
                4,
                2,
                1,
            )?;
            let norm = add_affine(store, &format!("{prefix}.up{i}_norm"), ch / 2)?;
            up.push((deconv, norm));
            ch /= 2;
        }
        let head = add_conv(store, rng, &format!("{prefix}.head"), 3, ch, 7, 1, 3, true)?;

        let style_stem =
            add_conv(store, rng, &format!("{prefix}.style.stem"), base, 3, 7, 1, 3, false)?;
        let style_stem_norm = add_affine(store, &format!("{prefix}.style.stem_norm"), base)?;
        let mut style_down = Vec::new();
        let mut sch = base;
        for i in 0..cfg.n_downsamples {
            let conv = add_conv(
                store,
                rng,
                &format!("{prefix}.style.down{i}"),
                sch * 2,
                sch,
                3,
                2,
                1,
                false,
            )?;
            let norm = add_affine(store, &format!("{prefix}.style.down{i}_norm"), sch * 2)?;
            style_down.push((conv, norm));
            sch *= 2;
        }
        let style_res = StyleResBlock {
            conv1: add_conv(store, rng, &format!("{prefix}.style.res.conv1"), sch, sch, 3, 1, 1, false)?,
            norm1: add_affine(store, &format!("{prefix}.style.res.norm1"), sch)?,
            conv2: add_conv(store, rng, &format!("{prefix}.style.res.conv2"), sch, sch, 3, 1, 1, false)?,
            norm2: add_affine(store, &format!("{prefix}.style.res.norm2"), sch)?,
        };

        Ok(Self {
            cfg,
            stem,
            stem_norm,
            down,
            res,
            up,
            head,
            style_stem,
            style_stem_norm,
            style_down,
            style_res,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    /// Style features at each downsample resolution, plus the bottleneck
    /// feature after the style residual block (used by every resblock).
    fn style_pyramid(
        &self,
        tape: &mut Tape,
        binds: &mut Bindings,
        store: &ParamStore,
        style: TensorId,
    ) -> Result<Vec<TensorId>> {
        let mut s = self.style_stem.apply(tape, binds, store, style)?;
        s = self.style_stem_norm.instance_norm(tape, binds, store, s)?;
        s = tape.relu(s)?;
        let mut pyramid = Vec::with_capacity(self.cfg.n_downsamples + 1);
        for (conv, norm) in &self.style_down {
            s = conv.apply(tape, binds, store, s)?;
            s = norm.instance_norm(tape, binds, store, s)?;
            s = tape.relu(s)?;
            pyramid.push(s);
        }
        let r = &self.style_res;
        let mut h = r.conv1.apply(tape, binds, store, s)?;
        h = r.norm1.instance_norm(tape, binds, store, h)?;
        h = tape.relu(h)?;
        h = r.conv2.apply(tape, binds, store, h)?;
        h = r.norm2.instance_norm(tape, binds, store, h)?;
        s = tape.add(s, h)?;
        pyramid.push(s);
        Ok(pyramid)
    }

    /// Full forward pass for one sample. `content` and `style` are
    /// `[1,3,S,S]` in [-1,1]; `masks` lives on the full-resolution grid.
    /// Dropout runs only when `training`, drawing from `rng`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        binds: &mut Bindings,
        store: &ParamStore,
        content: TensorId,
        style: TensorId,
        masks: &MaskSet,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<TensorId> {
        // The network is fully convolutional: any square size compatible
        // with the downsampling factor works, not just the training size.
        let content_shape = tape.shape(content);
        if content_shape.len() != 4 {
            return Err(Error::invalid(
                "generator",
                format!("content must be rank 4, got {content_shape:?}"),
            ));
        }
        let s = content_shape[2];
        let factor = 1usize << self.cfg.n_downsamples;
        if s % factor != 0 || s / factor < 4 {
            return Err(Error::invalid(
                "generator",
                format!("size {s} incompatible with {} downsamples", self.cfg.n_downsamples),
            ));
        }
        for (name, id) in [("content", content), ("style", style)] {
            let shape = tape.shape(id);
            if shape != [1, 3, s, s] {
                return Err(Error::invalid(
                    "generator",
                    format!("{name} must be [1,3,{s},{s}], got {shape:?}"),
                ));
            }
        }
        if masks.h() != s || masks.w() != s {
            return Err(Error::invalid(
                "generator",
                format!("masks are {}x{}, expected {s}x{s}", masks.h(), masks.w()),
            ));
        }

        // Region masks at each conditioned resolution, always derived from
        // the full-resolution set so chained pooling artifacts cannot
        // accumulate. Patches that degenerate at a site fall back to the
        // background statistics there.
        let mut mask_pyramid = Vec::with_capacity(self.cfg.n_downsamples);
        for i in 0..self.cfg.n_downsamples {
            mask_pyramid.push(masks.downsample(1 << (i + 1))?);
        }
        let deep_masks = if self.cfg.n_downsamples == 0 {
            masks.downsample(1)?
        } else {
            mask_pyramid[self.cfg.n_downsamples - 1].clone()
        };

        let pyramid = self.style_pyramid(tape, binds, store, style)?;

        let mut x = self.stem.apply(tape, binds, store, content)?;
        x = self.stem_norm.instance_norm(tape, binds, store, x)?;
        x = tape.relu(x)?;
        for (i, conv) in self.down.iter().enumerate() {
            x = conv.apply(tape, binds, store, x)?;
            x = patched_adain(tape, x, pyramid[i], &mask_pyramid[i])?;
            x = tape.relu(x)?;
        }
        let deep_style = pyramid[self.cfg.n_downsamples];
        for block in &self.res {
            let mut h = block.conv1.apply(tape, binds, store, x)?;
            h = block.norm1.instance_norm(tape, binds, store, h)?;
            h = tape.relu(h)?;
            if training && self.cfg.dropout > 0.0 {
                h = tape.dropout(h, self.cfg.dropout, rng)?;
            }
            h = block.conv2.apply(tape, binds, store, h)?;
            h = patched_adain(tape, h, deep_style, &deep_masks)?;
            x = tape.add(x, h)?;
        }
        for (deconv, norm) in &self.up {
            x = deconv.apply_transpose(tape, binds, store, x)?;
            x = norm.instance_norm(tape, binds, store, x)?;
            x = tape.relu(x)?;
        }
        x = self.head.apply(tape, binds, store, x)?;
        tape.tanh(x)
    }
}
