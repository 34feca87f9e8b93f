//! Normalization layers: batch/instance/conditional-instance norm, AdaIN,
//! and the masked per-region variant the generator is built around.

use crate::error::{Error, Result};
use crate::mask::MaskSet;
use crate::tensor::{Tape, TensorId};

/// Momentum of the running-statistics update in batch_norm training mode.
pub const BN_MOMENTUM: f32 = 0.1;

/// Per-channel inference statistics for [`batch_norm`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

fn expect_nchw(op: &'static str, tape: &Tape, x: TensorId) -> Result<[usize; 4]> {
    let s = tape.shape(x);
    if s.len() != 4 {
        return Err(Error::invalid(op, format!("expected NCHW input, got {s:?}")));
    }
    Ok([s[0], s[1], s[2], s[3]])
}

fn apply_affine(
    tape: &mut Tape,
    normed: TensorId,
    gamma: Option<TensorId>,
    beta: Option<TensorId>,
) -> Result<TensorId> {
    let mut y = normed;
    if let Some(g) = gamma {
        y = tape.mul(y, g)?;
    }
    if let Some(b) = beta {
        y = tape.add(y, b)?;
    }
    Ok(y)
}

/// Batch normalization. In training mode, normalizes with batch statistics
/// over (N,H,W) and folds them into `running` with momentum
/// [`BN_MOMENTUM`]; in inference mode, normalizes with `running` alone.
/// `gamma`/`beta` are `[1,C,1,1]` bound tensors.
pub fn batch_norm(
    tape: &mut Tape,
    x: TensorId,
    gamma: Option<TensorId>,
    beta: Option<TensorId>,
    running: &mut RunningStats,
    training: bool,
) -> Result<TensorId> {
    let [_, c, _, _] = expect_nchw("batch_norm", tape, x)?;
    if running.mean.len() != c || running.std.len() != c {
        return Err(Error::invalid(
            "batch_norm",
            format!("running stats sized for {} channels, input has {c}", running.mean.len()),
        ));
    }
    let normed = if training {
        let (mean, std) = tape.moments(x, &[0, 2, 3])?;
        for i in 0..c {
            running.mean[i] =
                (1.0 - BN_MOMENTUM) * running.mean[i] + BN_MOMENTUM * tape.data(mean)[i];
            running.std[i] =
                (1.0 - BN_MOMENTUM) * running.std[i] + BN_MOMENTUM * tape.data(std)[i];
        }
        let centered = tape.sub(x, mean)?;
        tape.div(centered, std)?
    } else {
        let mean = tape.constant(&[1, c, 1, 1], running.mean.clone())?;
        let std = tape.constant(&[1, c, 1, 1], running.std.clone())?;
        let centered = tape.sub(x, mean)?;
        tape.div(centered, std)?
    };
    apply_affine(tape, normed, gamma, beta)
}

/// Instance normalization over (H,W) per sample and channel.
pub fn instance_norm(
    tape: &mut Tape,
    x: TensorId,
    gamma: Option<TensorId>,
    beta: Option<TensorId>,
) -> Result<TensorId> {
    expect_nchw("instance_norm", tape, x)?;
    let (mean, std) = tape.moments(x, &[2, 3])?;
    let centered = tape.sub(x, mean)?;
    let normed = tape.div(centered, std)?;
    apply_affine(tape, normed, gamma, beta)
}

/// Instance norm whose affine is selected from per-class banks.
pub fn conditional_instance_norm(
    tape: &mut Tape,
    x: TensorId,
    gammas: &[TensorId],
    betas: &[TensorId],
    class: usize,
) -> Result<TensorId> {
    if gammas.len() != betas.len() {
        return Err(Error::invalid(
            "conditional_instance_norm",
            format!("{} gammas vs {} betas", gammas.len(), betas.len()),
        ));
    }
    if class >= gammas.len() {
        return Err(Error::invalid(
            "conditional_instance_norm",
            format!("class {class} out of range for {} classes", gammas.len()),
        ));
    }
    instance_norm(tape, x, Some(gammas[class]), Some(betas[class]))
}

/// Adaptive instance normalization: re-styles `x` with the per-channel
/// statistics of `s`. Spatial sizes may differ; batch and channels must match.
pub fn adain(tape: &mut Tape, x: TensorId, s: TensorId) -> Result<TensorId> {
    let [bx, cx, _, _] = expect_nchw("adain", tape, x)?;
    let [bs, cs, _, _] = expect_nchw("adain", tape, s)?;
    if bx != bs || cx != cs {
        return Err(Error::ShapeMismatch {
            op: "adain",
            lhs: tape.shape(x).to_vec(),
            rhs: tape.shape(s).to_vec(),
        });
    }
    let (mx, sx) = tape.moments(x, &[2, 3])?;
    let (ms, ss) = tape.moments(s, &[2, 3])?;
    let centered = tape.sub(x, mx)?;
    let normed = tape.div(centered, sx)?;
    let scaled = tape.mul(normed, ss)?;
    tape.add(scaled, ms)
}

/// Patched AdaIN: every region of `masks` is normalized with its own
/// masked statistics and re-styled with the matching masked statistics of
/// `s`; pixels outside all regions are treated the same way as one
/// background patch. Patches with fewer than two active pixels are
/// rejected ([`Error::DegeneratePatch`]), except that a fully covered
/// background simply contributes nothing.
pub fn patched_adain(
    tape: &mut Tape,
    x: TensorId,
    s: TensorId,
    masks: &MaskSet,
) -> Result<TensorId> {
    let [bx, cx, hx, wx] = expect_nchw("patched_adain", tape, x)?;
    let [bs, cs, hs, ws] = expect_nchw("patched_adain", tape, s)?;
    if bx != 1 || bs != 1 {
        return Err(Error::invalid(
            "patched_adain",
            "masks describe a single sample; batch must be 1",
        ));
    }
    if cx != cs || hx != hs || wx != ws {
        return Err(Error::ShapeMismatch {
            op: "patched_adain",
            lhs: tape.shape(x).to_vec(),
            rhs: tape.shape(s).to_vec(),
        });
    }
    if masks.h() != hx || masks.w() != wx {
        return Err(Error::invalid(
            "patched_adain",
            format!(
                "masks are {}x{}, features are {hx}x{wx}",
                masks.h(),
                masks.w()
            ),
        ));
    }

    let mut patches: Vec<&crate::mask::Mask> = masks.iter().collect();
    let background = masks.background();
    match background.active() {
        0 => {}
        1 => return Err(Error::DegeneratePatch { active: 1 }),
        _ => patches.push(&background),
    }

    let mut out: Option<TensorId> = None;
    for mask in patches {
        let m = tape.constant(&[1, 1, hx, wx], mask.data().to_vec())?;
        let (mx, sx) = tape.masked_moments(x, m)?;
        let (ms, ss) = tape.masked_moments(s, m)?;
        let centered = tape.sub(x, mx)?;
        let normed = tape.div(centered, sx)?;
        let scaled = tape.mul(normed, ss)?;
        let styled = tape.add(scaled, ms)?;
        let term = tape.mul(styled, m)?;
        out = Some(match out {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    match out {
        Some(id) => Ok(id),
        // No regions and an empty background cannot both happen, but an
        // empty mask set with full background is handled above.
        None => Err(Error::invalid("patched_adain", "no patches to normalize")),
    }
}
