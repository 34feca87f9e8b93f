//! PatchGAN discriminator over (image, content) pairs.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::norm::instance_norm;
use crate::params::{Bindings, ParamId, ParamStore};
use crate::tensor::{Tape, TensorId};

pub const LEAKY_SLOPE: f32 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorConfig {
    /// Channels after the first convolution.
    pub base_channels: usize,
    /// Stride-2 convolutions; each halves the map and doubles channels.
    pub n_layers: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            n_layers: 3,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.n_layers == 0 {
            return Err(Error::InvalidConfig(
                "discriminator needs positive base_channels and n_layers".into(),
            ));
        }
        Ok(())
    }
}

struct Layer {
    w: ParamId,
    b: Option<ParamId>,
    norm: Option<(ParamId, ParamId)>,
    c: usize,
}

pub struct Discriminator {
    cfg: DiscriminatorConfig,
    layers: Vec<Layer>,
    head_w: ParamId,
    head_b: ParamId,
}

impl Discriminator {
    pub fn new(
        store: &mut ParamStore,
        cfg: DiscriminatorConfig,
        rng: &mut ChaCha8Rng,
        prefix: &str,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::new();
        let mut ic = 6;
        let mut oc = cfg.base_channels;
        for i in 0..cfg.n_layers {
            let w = store.add_normal(format!("{prefix}.conv{i}.w"), &[oc, ic, 4, 4], rng)?;
            // First layer is unnormalized and keeps its bias; later layers
            // feed instance norm, which would zero a bias gradient.
            let (b, norm) = if i == 0 {
                (Some(store.add_full(format!("{prefix}.conv{i}.b"), &[oc], 0.0)?), None)
            } else {
                let g = store.add_full(format!("{prefix}.conv{i}_norm.g"), &[oc], 1.0)?;
                let be = store.add_full(format!("{prefix}.conv{i}_norm.b"), &[oc], 0.0)?;
                (None, Some((g, be)))
            };
            layers.push(Layer { w, b, norm, c: oc });
            ic = oc;
            oc *= 2;
        }
        let head_w = store.add_normal(format!("{prefix}.head.w"), &[1, ic, 3, 3], rng)?;
        let head_b = store.add_full(format!("{prefix}.head.b"), &[1], 0.0)?;
        Ok(Self {
            cfg,
            layers,
            head_w,
            head_b,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    /// Patch logits for an (image, content) pair, both `[1,3,S,S]`.
    /// The map is `[1,1,S/2^n,S/2^n]`; each logit judges one receptive
    /// field rather than the whole image.
    pub fn forward(
        &self,
        tape: &mut Tape,
        binds: &mut Bindings,
        store: &ParamStore,
        image: TensorId,
        content: TensorId,
    ) -> Result<TensorId> {
        if tape.shape(image) != tape.shape(content) {
            return Err(Error::ShapeMismatch {
                op: "discriminator",
                lhs: tape.shape(image).to_vec(),
                rhs: tape.shape(content).to_vec(),
            });
        }
        let mut x = tape.concat_channels(image, content)?;
        for layer in &self.layers {
            let w = binds.bind(tape, store, layer.w)?;
            let b = layer.b.map(|b| binds.bind(tape, store, b)).transpose()?;
            x = tape.conv2d(x, w, b, 2, 1)?;
            if let Some((g, be)) = layer.norm {
                let g = binds.bind_as(tape, store, g, &[1, layer.c, 1, 1])?;
                let be = binds.bind_as(tape, store, be, &[1, layer.c, 1, 1])?;
                x = instance_norm(tape, x, Some(g), Some(be))?;
            }
            x = tape.leaky_relu(x, LEAKY_SLOPE)?;
        }
        let w = binds.bind(tape, store, self.head_w)?;
        let b = binds.bind(tape, store, self.head_b)?;
        tape.conv2d(x, w, Some(b), 1, 1)
    }
}
