//! Adversarial training loop.
//!
//! Each step draws a batch with replacement, updates the discriminator on
//! real/fake pairs (the fake is detached), then updates the generator
//! against the freshly updated discriminator plus an L1 reconstruction
//! term. Both passes scale their losses by `1/batch_size`, so a batch is
//! the mean over independent per-sample graphs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{CheckpointData, Record};
use crate::data::Sample;
use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::mask::MaskSet;
use crate::optim::{Adam, AdamConfig};
use crate::params::{Bindings, ParamStore};
use crate::tensor::{Tape, TensorId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Weight on the L1 reconstruction term of the generator loss.
    pub lambda_l1: f32,
    pub learning_rate: f32,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub batch_size: usize,
    /// Total optimization steps; resuming continues toward the same total.
    pub steps: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_l1: 100.0,
            learning_rate: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            batch_size: 1,
            steps: 5000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda_l1.is_finite() || self.lambda_l1 < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda_l1 must be finite and non-negative, got {}",
                self.lambda_l1
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0,1), got {b}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamConfig::default()
        }
    }
}

/// `bce(fake_logits, 1) + lambda_l1 * l1(fake, target)`.
/// Returns `(total, adv, l1)`; `adv` and `l1` are the unweighted terms.
pub fn generator_loss(
    tape: &mut Tape,
    fake_logits: TensorId,
    fake: TensorId,
    target: TensorId,
    lambda_l1: f32,
) -> Result<(TensorId, TensorId, TensorId)> {
    let shape = tape.shape(fake_logits).to_vec();
    let ones = tape.full(&shape, 1.0)?;
    let adv = tape.bce_with_logits(fake_logits, ones)?;
    let l1 = tape.l1_loss(fake, target)?;
    let weighted = tape.scale(l1, lambda_l1)?;
    let total = tape.add(adv, weighted)?;
    Ok((total, adv, l1))
}

/// `0.5 * (bce(real_logits, 1) + bce(fake_logits, 0))`.
pub fn discriminator_loss(
    tape: &mut Tape,
    real_logits: TensorId,
    fake_logits: TensorId,
) -> Result<TensorId> {
    let real_shape = tape.shape(real_logits).to_vec();
    let fake_shape = tape.shape(fake_logits).to_vec();
    let ones = tape.full(&real_shape, 1.0)?;
    let zeros = tape.full(&fake_shape, 0.0)?;
    let real = tape.bce_with_logits(real_logits, ones)?;
    let fake = tape.bce_with_logits(fake_logits, zeros)?;
    let sum = tape.add(real, fake)?;
    tape.scale(sum, 0.5)
}

/// Batch-mean losses for one optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    /// `loss_g_adv + lambda_l1 * loss_g_l1`.
    pub loss_g: f32,
    pub loss_g_l1: f32,
    pub loss_g_adv: f32,
    pub loss_d: f32,
}

impl StepRecord {
    pub fn line(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6}",
            self.step, self.loss_g, self.loss_g_l1, self.loss_g_adv, self.loss_d
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingReport {
    pub records: Vec<StepRecord>,
}

impl TrainingReport {
    /// One `step,loss_g,loss_g_l1,loss_g_adv,loss_d` line per step.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for rec in &self.records {
            out.push_str(&rec.line());
            out.push('\n');
        }
        out
    }
}

/// Generator graph for one sample, kept alive between the two passes of a
/// step so the generator update can reuse the forward activations.
struct PerSample {
    tape: Tape,
    binds: Bindings,
    fake: TensorId,
    content: TensorId,
}

pub struct Trainer {
    cfg: TrainConfig,
    g_store: ParamStore,
    d_store: ParamStore,
    generator: Generator,
    discriminator: Discriminator,
    adam_g: Adam,
    adam_d: Adam,
    rng: ChaCha8Rng,
    step: u64,
}

impl Trainer {
    pub fn new(
        gen_cfg: GeneratorConfig,
        disc_cfg: DiscriminatorConfig,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut g_store = ParamStore::new();
        let generator = Generator::new(&mut g_store, gen_cfg, &mut rng, "g")?;
        let mut d_store = ParamStore::new();
        let discriminator = Discriminator::new(&mut d_store, disc_cfg, &mut rng, "d")?;
        let adam_g = Adam::new(cfg.adam(), &g_store);
        let adam_d = Adam::new(cfg.adam(), &d_store);
        Ok(Self {
            cfg,
            g_store,
            d_store,
            generator,
            discriminator,
            adam_g,
            adam_d,
            rng,
            step: 0,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn generator_config(&self) -> &GeneratorConfig {
        self.generator.config()
    }

    pub fn discriminator_config(&self) -> &DiscriminatorConfig {
        self.discriminator.config()
    }

    pub fn g_store(&self) -> &ParamStore {
        &self.g_store
    }

    pub fn d_store(&self) -> &ParamStore {
        &self.d_store
    }

    fn forward_sample(&mut self, sample: &Sample, training: bool) -> Result<PerSample> {
        let s = sample.size;
        let shape = [1, 3, s, s];
        let mut tape = Tape::new();
        let mut binds = Bindings::trainable();
        let content = tape.constant(&shape, sample.content.clone())?;
        let style = tape.constant(&shape, sample.style.clone())?;
        let fake = self.generator.forward(
            &mut tape,
            &mut binds,
            &self.g_store,
            content,
            style,
            &sample.masks,
            training,
            &mut self.rng,
        )?;
        Ok(PerSample { tape, binds, fake, content })
    }

    /// One optimizer step on `batch`: discriminator first (fakes detached),
    /// then the generator against the updated discriminator.
    pub fn step_batch(&mut self, batch: &[&Sample]) -> Result<StepRecord> {
        if batch.is_empty() {
            return Err(Error::invalid("step_batch", "batch is empty"));
        }
        let inv_b = 1.0 / batch.len() as f32;

        let mut per = Vec::with_capacity(batch.len());
        let mut loss_d = 0.0f32;
        for &sample in batch {
            let ps = self.forward_sample(sample, true)?;
            let shape = [1, 3, sample.size, sample.size];
            let mut tape = Tape::new();
            let mut binds = Bindings::trainable();
            let content = tape.constant(&shape, sample.content.clone())?;
            let target = tape.constant(&shape, sample.target.clone())?;
            let fake = tape.constant(&shape, ps.tape.data(ps.fake).to_vec())?;
            let real_logits =
                self.discriminator
                    .forward(&mut tape, &mut binds, &self.d_store, target, content)?;
            let fake_logits =
                self.discriminator
                    .forward(&mut tape, &mut binds, &self.d_store, fake, content)?;
            let loss = discriminator_loss(&mut tape, real_logits, fake_logits)?;
            let scaled = tape.scale(loss, inv_b)?;
            loss_d += tape.data(scaled)[0];
            tape.backward(scaled)?;
            binds.harvest(&tape, &mut self.d_store)?;
            per.push(ps);
        }
        self.adam_d.step(&mut self.d_store);
        self.d_store.zero_grads();

        let (mut loss_g, mut loss_g_l1, mut loss_g_adv) = (0.0f32, 0.0f32, 0.0f32);
        for (&sample, mut ps) in batch.iter().zip(per) {
            let mut frozen = Bindings::frozen();
            let fake_logits = self.discriminator.forward(
                &mut ps.tape,
                &mut frozen,
                &self.d_store,
                ps.fake,
                ps.content,
            )?;
            let shape = [1, 3, sample.size, sample.size];
            let target = ps.tape.constant(&shape, sample.target.clone())?;
            let (total, adv, l1) =
                generator_loss(&mut ps.tape, fake_logits, ps.fake, target, self.cfg.lambda_l1)?;
            let scaled = ps.tape.scale(total, inv_b)?;
            loss_g += ps.tape.data(scaled)[0];
            loss_g_l1 += ps.tape.data(l1)[0] * inv_b;
            loss_g_adv += ps.tape.data(adv)[0] * inv_b;
            ps.tape.backward(scaled)?;
            ps.binds.harvest(&ps.tape, &mut self.g_store)?;
        }
        self.adam_g.step(&mut self.g_store);
        self.g_store.zero_grads();

        self.step += 1;
        if !loss_g.is_finite() || !loss_d.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                loss_g,
                loss_d,
            });
        }
        Ok(StepRecord {
            step: self.step,
            loss_g,
            loss_g_l1,
            loss_g_adv,
            loss_d,
        })
    }

    /// Runs until `cfg.steps`, drawing batches with replacement. When
    /// `out_dir` is set, writes `ckpt_{step:06}.bin` every
    /// `checkpoint_every` steps (0 disables periodic saves) and always at
    /// the end.
    pub fn run(
        &mut self,
        data: &[Sample],
        out_dir: Option<&Path>,
        checkpoint_every: u64,
    ) -> Result<TrainingReport> {
        if data.is_empty() {
            return Err(Error::invalid("train", "dataset is empty"));
        }
        let mut report = TrainingReport::default();
        while self.step < self.cfg.steps {
            let batch: Vec<&Sample> = (0..self.cfg.batch_size)
                .map(|_| &data[self.rng.gen_range(0..data.len())])
                .collect();
            let rec = self.step_batch(&batch)?;
            report.records.push(rec);
            if let Some(dir) = out_dir {
                if checkpoint_every > 0
                    && self.step % checkpoint_every == 0
                    && self.step < self.cfg.steps
                {
                    self.save(&dir.join(format!("ckpt_{:06}.bin", self.step)))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.save(&dir.join(format!("ckpt_{:06}.bin", self.step)))?;
        }
        Ok(report)
    }

    /// Runs the generator in eval mode (no dropout, nothing recorded).
    /// `content` and `style` are planar `[3,s,s]` in `[-1,1]`; the size
    /// only has to be compatible with the downsampling factor, not equal
    /// to the training size.
    pub fn infer(&self, content: &[f32], style: &[f32], masks: &MaskSet) -> Result<Vec<f32>> {
        let s = masks.h();
        if masks.w() != s {
            return Err(Error::invalid(
                "infer",
                format!("masks must be square, got {}x{}", masks.w(), masks.h()),
            ));
        }
        for (name, buf) in [("content", content), ("style", style)] {
            if buf.len() != 3 * s * s {
                return Err(Error::invalid(
                    "infer",
                    format!("{name} has {} values, expected {}", buf.len(), 3 * s * s),
                ));
            }
        }
        let mut tape = Tape::new();
        let mut binds = Bindings::frozen();
        let c = tape.constant(&[1, 3, s, s], content.to_vec())?;
        let st = tape.constant(&[1, 3, s, s], style.to_vec())?;
        // Eval mode never touches the RNG, so a throwaway one keeps
        // inference independent of training state.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.generator.forward(
            &mut tape, &mut binds, &self.g_store, c, st, masks, false, &mut rng,
        )?;
        Ok(tape.data(out).to_vec())
    }

    /// Mean per-pixel L1 between `infer` output and target over `samples`.
    pub fn held_out_l1(&self, samples: &[Sample]) -> Result<f32> {
        if samples.is_empty() {
            return Err(Error::EmptyReduction { op: "held_out_l1" });
        }
        let mut total = 0.0f64;
        for sample in samples {
            let fake = self.infer(&sample.content, &sample.style, &sample.masks)?;
            let sum: f64 = fake
                .iter()
                .zip(&sample.target)
                .map(|(&a, &b)| (a - b).abs() as f64)
                .sum();
            total += sum / fake.len() as f64;
        }
        Ok((total / samples.len() as f64) as f32)
    }

    pub fn to_checkpoint(&self) -> CheckpointData {
        let mut records = Vec::new();
        for store in [&self.g_store, &self.d_store] {
            for p in store.iter() {
                records.push(Record {
                    name: p.name().to_string(),
                    shape: p.shape().to_vec(),
                    data: p.data().to_vec(),
                });
            }
        }
        for (label, store, adam) in [
            ("adam_g", &self.g_store, &self.adam_g),
            ("adam_d", &self.d_store, &self.adam_d),
        ] {
            for (i, p) in store.iter().enumerate() {
                let (m, v) = adam.moments(i);
                records.push(Record {
                    name: format!("{label}.m.{}", p.name()),
                    shape: p.shape().to_vec(),
                    data: m.to_vec(),
                });
                records.push(Record {
                    name: format!("{label}.v.{}", p.name()),
                    shape: p.shape().to_vec(),
                    data: v.to_vec(),
                });
            }
        }
        CheckpointData {
            step: self.step,
            rng_seed: self.rng.get_seed(),
            rng_word_pos: self.rng.get_word_pos(),
            rng_stream: self.rng.get_stream(),
            train: self.cfg,
            gen: *self.generator.config(),
            disc: *self.discriminator.config(),
            adam_g_t: self.adam_g.t(),
            adam_d_t: self.adam_d.t(),
            records,
        }
    }

    pub fn from_checkpoint(data: &CheckpointData) -> Result<Self> {
        data.train.validate()?;
        let mut records = std::collections::HashMap::new();
        for rec in &data.records {
            if records.insert(rec.name.as_str(), rec).is_some() {
                return Err(Error::Checkpoint(format!("duplicate record {}", rec.name)));
            }
        }
        let take = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let rec = records
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing record {name}")))?;
            if rec.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "record {name} has shape {:?}, expected {shape:?}",
                    rec.shape
                )));
            }
            Ok(rec.data.clone())
        };

        // Weights are overwritten below, so the init RNG is irrelevant;
        // construction only fixes shapes and parameter order.
        let mut init_rng = ChaCha8Rng::seed_from_u64(0);
        let mut g_store = ParamStore::new();
        let generator = Generator::new(&mut g_store, data.gen, &mut init_rng, "g")?;
        let mut d_store = ParamStore::new();
        let discriminator = Discriminator::new(&mut d_store, data.disc, &mut init_rng, "d")?;
        if data.records.len() != 3 * (g_store.len() + d_store.len()) {
            return Err(Error::Checkpoint(format!(
                "{} records, expected {} for this architecture",
                data.records.len(),
                3 * (g_store.len() + d_store.len())
            )));
        }

        let restore_store = |store: &mut ParamStore, label: &str| -> Result<Adam> {
            let (mut ms, mut vs) = (Vec::new(), Vec::new());
            for i in 0..store.len() {
                let p = store.get(crate::params::ParamId(i));
                let (name, shape) = (p.name().to_string(), p.shape().to_vec());
                let weights = take(&name, &shape)?;
                ms.push(take(&format!("{label}.m.{name}"), &shape)?);
                vs.push(take(&format!("{label}.v.{name}"), &shape)?);
                store
                    .get_mut(crate::params::ParamId(i))
                    .data_mut()
                    .copy_from_slice(&weights);
            }
            let t = if label == "adam_g" { data.adam_g_t } else { data.adam_d_t };
            Ok(Adam::restore(data.train.adam(), t, ms, vs))
        };
        let adam_g = restore_store(&mut g_store, "adam_g")?;
        let adam_d = restore_store(&mut d_store, "adam_d")?;

        let mut rng = ChaCha8Rng::from_seed(data.rng_seed);
        rng.set_stream(data.rng_stream);
        rng.set_word_pos(data.rng_word_pos);

        Ok(Self {
            cfg: data.train,
            g_store,
            d_store,
            generator,
            discriminator,
            adam_g,
            adam_d,
            rng,
            step: data.step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&CheckpointData::load(path)?)
    }
}
