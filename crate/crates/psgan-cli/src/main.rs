//! `psgan` command line: dataset generation, training, replacement,
//! evaluation.
//!
//! Every subcommand accepts `--config FILE`, a plain `key=value` overlay
//! whose entries are overridden by explicit flags; unknown keys are
//! rejected. The fully resolved configuration is logged to stderr, so a
//! run is reproducible from its log. Machine-readable output goes to
//! stdout only; all diagnostics go to stderr.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use psgan::data::sample::{image_to_planar, planar_to_image, signed_to_unit, unit_to_signed};
use psgan::data::{
    load_dataset, parse_annotations, replacement_content, replacement_masks, write_dataset,
    SynthSpec,
};
use psgan::discriminator::DiscriminatorConfig;
use psgan::generator::GeneratorConfig;
use psgan::metrics::{evaluate, evaluate_targets, EvalCase, OracleRecognizer};
use psgan::train::{TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "psgan", version, about = "Text replacement with a patch-conditioned GAN")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset
    Datagen(DatagenArgs),
    /// Train a model on a dataset directory
    Train(TrainArgs),
    /// Replace text inside polygon regions of one image
    Replace(ReplaceArgs),
    /// Score a dataset (raw targets, or model output given --ckpt)
    Eval(EvalArgs),
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Datagen(a) => cmd_datagen(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Replace(a) => cmd_replace(a),
        Cmd::Eval(a) => cmd_eval(a),
    }
}

/// `key=value` config file; `#` starts a comment line.
struct Overlay {
    map: BTreeMap<String, String>,
}

impl Overlay {
    fn load(path: Option<&Path>, allowed: &[&str]) -> Result<Self> {
        let mut map = BTreeMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    anyhow!("config line {}: expected key=value, got {line:?}", i + 1)
                })?;
                let (k, v) = (k.trim(), v.trim());
                if !allowed.contains(&k) {
                    bail!(
                        "config line {}: unknown key {k:?} (allowed: {})",
                        i + 1,
                        allowed.join(", ")
                    );
                }
                if map.insert(k.to_string(), v.to_string()).is_some() {
                    bail!("config line {}: duplicate key {k:?}", i + 1);
                }
            }
        }
        Ok(Self { map })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.map
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| anyhow!("config key {key}={v:?}: {e}"))
            })
            .transpose()
    }

    fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn need<T>(flag: Option<T>, file: Option<T>, key: &str) -> Result<T> {
    flag.or(file).ok_or_else(|| {
        anyhow!(
            "missing required --{} (or {key}= in a config file)",
            key.replace('_', "-")
        )
    })
}

#[derive(Args)]
struct DatagenArgs {
    /// key=value overlay file; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output dataset directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of samples to generate
    #[arg(long)]
    n: Option<usize>,
    /// Square image size in pixels
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Most text regions per image
    #[arg(long = "max-polys")]
    max_polys: Option<usize>,
    /// Write into a non-empty output directory
    #[arg(long)]
    force: bool,
}

const DATAGEN_KEYS: &[&str] = &["out", "n", "size", "seed", "max_polys", "min_polys", "force"];

fn cmd_datagen(a: DatagenArgs) -> Result<()> {
    let file = Overlay::load(a.config.as_deref(), DATAGEN_KEYS)?;
    let out: PathBuf = need(a.out, file.get("out")?, "out")?;
    let n: usize = need(a.n, file.get("n")?, "n")?;
    let size = pick(a.size, file.get("size")?, 64);
    let seed = pick(a.seed, file.get("seed")?, 0);
    let min_polys = file.get("min_polys")?.unwrap_or(1);
    let max_polys = pick(a.max_polys, file.get("max_polys")?, 2);
    let force = a.force || file.get("force")?.unwrap_or(false);
    eprintln!(
        "config: cmd=datagen out={} n={n} size={size} seed={seed} min_polys={min_polys} \
         max_polys={max_polys} force={force}",
        out.display()
    );

    let spec = SynthSpec {
        image_size: size,
        regions_min: min_polys,
        regions_max: max_polys,
        seed,
    };
    spec.validate()?;
    if out.exists() && out.read_dir()?.next().is_some() && !force {
        bail!(
            "output directory {} is not empty (use --force to overwrite)",
            out.display()
        );
    }
    write_dataset(&out, &spec, n)?;
    println!("generated {n} samples -> {}", out.display());
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    /// key=value overlay file; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (from `datagen`)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for checkpoints and the loss report
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Resume from a checkpoint; hyperparameters then come from it
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Checkpoint period in steps (0 = only at the end)
    #[arg(long = "ckpt-every")]
    ckpt_every: Option<u64>,
}

const TRAIN_KEYS: &[&str] = &[
    "data",
    "out",
    "steps",
    "batch",
    "seed",
    "resume",
    "ckpt_every",
    "lambda_l1",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "base_channels",
    "n_downsamples",
    "n_resblocks",
    "dropout",
    "disc_base_channels",
    "disc_n_layers",
];

fn cmd_train(a: TrainArgs) -> Result<()> {
    let file = Overlay::load(a.config.as_deref(), TRAIN_KEYS)?;
    let data: PathBuf = need(a.data, file.get("data")?, "data")?;
    let out: PathBuf = need(a.out, file.get("out")?, "out")?;
    let resume: Option<PathBuf> = a.resume.or(file.get("resume")?);
    let ckpt_every = pick(a.ckpt_every, file.get("ckpt_every")?, 1000);

    let entries = load_dataset(&data).with_context(|| format!("loading {}", data.display()))?;
    if entries.is_empty() {
        bail!("dataset {} contains no usable samples", data.display());
    }
    let samples: Vec<_> = entries.into_iter().map(|(_, s)| s).collect();
    let size = samples[0].size;
    if let Some(s) = samples.iter().find(|s| s.size != size) {
        bail!("dataset mixes image sizes {size} and {}", s.size);
    }

    let mut trainer = if let Some(ckpt) = &resume {
        let fixed = [
            ("steps", a.steps.is_some() || file.has("steps")),
            ("batch", a.batch.is_some() || file.has("batch")),
            ("seed", a.seed.is_some() || file.has("seed")),
            ("lambda_l1", file.has("lambda_l1")),
            ("learning_rate", file.has("learning_rate")),
            ("adam_beta1", file.has("adam_beta1")),
            ("adam_beta2", file.has("adam_beta2")),
            ("base_channels", file.has("base_channels")),
            ("n_downsamples", file.has("n_downsamples")),
            ("n_resblocks", file.has("n_resblocks")),
            ("dropout", file.has("dropout")),
            ("disc_base_channels", file.has("disc_base_channels")),
            ("disc_n_layers", file.has("disc_n_layers")),
        ];
        let clashes: Vec<&str> = fixed.iter().filter(|(_, g)| *g).map(|(k, _)| *k).collect();
        if !clashes.is_empty() {
            bail!(
                "cannot override {} when resuming; the checkpoint fixes them",
                clashes.join(", ")
            );
        }
        Trainer::load(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?
    } else {
        let d = TrainConfig::default();
        let train_cfg = TrainConfig {
            lambda_l1: file.get("lambda_l1")?.unwrap_or(d.lambda_l1),
            learning_rate: file.get("learning_rate")?.unwrap_or(d.learning_rate),
            adam_beta1: file.get("adam_beta1")?.unwrap_or(d.adam_beta1),
            adam_beta2: file.get("adam_beta2")?.unwrap_or(d.adam_beta2),
            batch_size: pick(a.batch, file.get("batch")?, d.batch_size),
            steps: pick(a.steps, file.get("steps")?, d.steps),
            seed: pick(a.seed, file.get("seed")?, d.seed),
        };
        let g = GeneratorConfig::default();
        let gen_cfg = GeneratorConfig {
            image_size: size,
            base_channels: file.get("base_channels")?.unwrap_or(g.base_channels),
            n_downsamples: file.get("n_downsamples")?.unwrap_or(g.n_downsamples),
            n_resblocks: file.get("n_resblocks")?.unwrap_or(g.n_resblocks),
            dropout: file.get("dropout")?.unwrap_or(g.dropout),
        };
        let dd = DiscriminatorConfig::default();
        let disc_cfg = DiscriminatorConfig {
            base_channels: file.get("disc_base_channels")?.unwrap_or(dd.base_channels),
            n_layers: file.get("disc_n_layers")?.unwrap_or(dd.n_layers),
        };
        Trainer::new(gen_cfg, disc_cfg, train_cfg)?
    };

    let (t, g, dd) = (
        *trainer.config(),
        *trainer.generator_config(),
        *trainer.discriminator_config(),
    );
    eprintln!(
        "config: cmd=train data={} out={} resume={} ckpt_every={ckpt_every} steps={} batch={} \
         seed={} lambda_l1={} learning_rate={} adam_beta1={} adam_beta2={} image_size={} \
         base_channels={} n_downsamples={} n_resblocks={} dropout={} disc_base_channels={} \
         disc_n_layers={}",
        data.display(),
        out.display(),
        resume
            .as_ref()
            .map_or("none".to_string(), |p| p.display().to_string()),
        t.steps,
        t.batch_size,
        t.seed,
        t.lambda_l1,
        t.learning_rate,
        t.adam_beta1,
        t.adam_beta2,
        g.image_size,
        g.base_channels,
        g.n_downsamples,
        g.n_resblocks,
        g.dropout,
        dd.base_channels,
        dd.n_layers
    );

    fs::create_dir_all(&out)?;
    let report = trainer
        .run(&samples, Some(&out), ckpt_every)
        .map_err(|e| anyhow!("training aborted: {e}"))?;
    fs::write(out.join("report.txt"), report.render())?;
    println!("trained {} steps -> {}", trainer.step(), out.display());
    Ok(())
}

#[derive(Args)]
struct ReplaceArgs {
    /// key=value overlay file; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input PNG
    #[arg(long)]
    image: Option<PathBuf>,
    /// Polygon file in the annotation grammar (transcripts ignored)
    #[arg(long)]
    polys: Option<PathBuf>,
    /// Replacement string applied to every polygon
    #[arg(long)]
    text: Option<String>,
    /// Trained checkpoint
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Output PNG
    #[arg(long)]
    out: Option<PathBuf>,
}

const REPLACE_KEYS: &[&str] = &["image", "polys", "text", "ckpt", "out"];

fn cmd_replace(a: ReplaceArgs) -> Result<()> {
    let file = Overlay::load(a.config.as_deref(), REPLACE_KEYS)?;
    let image: PathBuf = need(a.image, file.get("image")?, "image")?;
    let polys: PathBuf = need(a.polys, file.get("polys")?, "polys")?;
    let text: String = need(a.text, file.get("text")?, "text")?;
    let ckpt: PathBuf = need(a.ckpt, file.get("ckpt")?, "ckpt")?;
    let out: PathBuf = need(a.out, file.get("out")?, "out")?;
    eprintln!(
        "config: cmd=replace image={} polys={} text={text:?} ckpt={} out={}",
        image.display(),
        polys.display(),
        ckpt.display(),
        out.display()
    );

    let anns = parse_annotations(
        &fs::read_to_string(&polys).with_context(|| format!("reading {}", polys.display()))?,
    )
    .with_context(|| format!("parsing {}", polys.display()))?;
    if anns.is_empty() {
        fs::write(&out, fs::read(&image)?)?;
        println!("replaced 0 regions -> {}", out.display());
        return Ok(());
    }

    let rgb = image::open(&image)
        .with_context(|| format!("opening {}", image.display()))?
        .to_rgb8();
    let (h, w, mut planar) = image_to_planar(&rgb);
    unit_to_signed(&mut planar);

    let trainer =
        Trainer::load(&ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    // Pad to a square the generator accepts: a multiple of the
    // downsampling factor, at least 4 deep cells, replicating border
    // pixels. Only the original area is written back.
    let factor = 1usize << trainer.generator_config().n_downsamples;
    let s = h.max(w).max(4 * factor).div_ceil(factor) * factor;
    let mut padded = vec![0.0f32; 3 * s * s];
    for c in 0..3 {
        for y in 0..s {
            for x in 0..s {
                padded[(c * s + y) * s + x] = planar[(c * h + y.min(h - 1)) * w + x.min(w - 1)];
            }
        }
    }

    let masks = replacement_masks(&anns, s)?;
    if masks.len() == 0 {
        eprintln!("note: every polygon rasterized to a degenerate region; copying input");
        fs::write(&out, fs::read(&image)?)?;
        println!("replaced 0 regions -> {}", out.display());
        return Ok(());
    }
    let texts = vec![text.clone(); masks.len()];
    let content = replacement_content(&padded, s, &masks, &texts)?;
    let fake = trainer.infer(&content, &padded, &masks)?;

    // Composite: generator output inside the regions, input elsewhere.
    let mut composed = padded;
    for m in masks.iter() {
        for (i, &mv) in m.data().iter().enumerate() {
            if mv != 0.0 {
                let (y, x) = (i / s, i % s);
                for c in 0..3 {
                    composed[(c * s + y) * s + x] = fake[(c * s + y) * s + x];
                }
            }
        }
    }
    let mut cropped = vec![0.0f32; 3 * h * w];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                cropped[(c * h + y) * w + x] = composed[(c * s + y) * s + x];
            }
        }
    }
    signed_to_unit(&mut cropped);
    planar_to_image(h, w, &cropped)
        .save(&out)
        .with_context(|| format!("writing {}", out.display()))?;
    println!("replaced {} regions -> {}", masks.len(), out.display());
    Ok(())
}

#[derive(Args)]
struct EvalArgs {
    /// key=value overlay file; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory to score
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint to run the generator; without it raw targets are scored
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Output file for the metric record (details go to <out>.details.csv)
    #[arg(long)]
    out: Option<PathBuf>,
}

const EVAL_KEYS: &[&str] = &["data", "ckpt", "out"];

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let file = Overlay::load(a.config.as_deref(), EVAL_KEYS)?;
    let data: PathBuf = need(a.data, file.get("data")?, "data")?;
    let out: PathBuf = need(a.out, file.get("out")?, "out")?;
    let ckpt: Option<PathBuf> = a.ckpt.or(file.get("ckpt")?);
    eprintln!(
        "config: cmd=eval data={} ckpt={} out={}",
        data.display(),
        ckpt.as_ref()
            .map_or("none".to_string(), |p| p.display().to_string()),
        out.display()
    );

    let entries = load_dataset(&data).with_context(|| format!("loading {}", data.display()))?;
    if entries.is_empty() {
        bail!("dataset {} contains no usable samples", data.display());
    }
    let oracle = OracleRecognizer::new();
    let evaluation = match &ckpt {
        None => evaluate_targets(&entries, &oracle)?,
        Some(ckpt) => {
            let trainer = Trainer::load(ckpt)
                .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
            let cases = entries
                .iter()
                .map(|(id, s)| {
                    let pixels = trainer.infer(&s.content, &s.style, &s.masks)?;
                    Ok(EvalCase {
                        id: id.clone(),
                        size: s.size,
                        pixels,
                        masks: s.masks.clone(),
                        truths: s.transcripts.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            evaluate(&cases, &oracle)?
        }
    };

    if evaluation.n_failures > 0 {
        eprintln!(
            "note: recognizer failed on {} regions (scored as empty)",
            evaluation.n_failures
        );
    }
    print!("{}", evaluation.report.table());
    fs::write(&out, evaluation.report.record())?;
    let mut details = out.clone().into_os_string();
    details.push(".details.csv");
    let details = PathBuf::from(details);
    fs::write(&details, evaluation.detail_lines())?;
    eprintln!("wrote {} and {}", out.display(), details.display());
    Ok(())
}
