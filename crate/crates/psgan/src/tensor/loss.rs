//! Scalar training losses.

use super::{grad_mut, Node, Op, Tape, TensorId};
use crate::error::{Error, Result};

fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    /// Mean absolute error over all elements; returns a `[1]` scalar.
    pub fn l1_loss(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "l1_loss",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let n = self.numel(a) as f32;
        let sum: f32 = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| (x - y).abs())
            .sum();
        let req = self.requires_grad(a) || self.requires_grad(b);
        self.push_result("l1_loss", vec![1], vec![sum / n], req, || Op::L1Loss { a, b })
    }

    /// Numerically stable `mean(max(z,0) - z*t + ln(1 + exp(-|z|)))`;
    /// returns a `[1]` scalar.
    pub fn bce_with_logits(&mut self, logits: TensorId, targets: TensorId) -> Result<TensorId> {
        if self.shape(logits) != self.shape(targets) {
            return Err(Error::ShapeMismatch {
                op: "bce_with_logits",
                lhs: self.shape(logits).to_vec(),
                rhs: self.shape(targets).to_vec(),
            });
        }
        let n = self.numel(logits) as f32;
        let sum: f32 = self
            .data(logits)
            .iter()
            .zip(self.data(targets))
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let req = self.requires_grad(logits) || self.requires_grad(targets);
        self.push_result("bce_with_logits", vec![1], vec![sum / n], req, || {
            Op::BceWithLogits { logits, targets }
        })
    }
}

pub(super) fn backward_l1(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    a: TensorId,
    b: TensorId,
    gout: &[f32],
) {
    let scale = gout[0] / nodes[a.0].data.len() as f32;
    if nodes[a.0].requires_grad {
        let (xa, xb) = (&nodes[a.0].data, &nodes[b.0].data);
        let ga = grad_mut(grads, nodes, a);
        for ((g, &x), &y) in ga.iter_mut().zip(xa).zip(xb) {
            *g += scale * (x - y).signum_or_zero();
        }
    }
    if nodes[b.0].requires_grad {
        let (xa, xb) = (&nodes[a.0].data, &nodes[b.0].data);
        let gb = grad_mut(grads, nodes, b);
        for ((g, &x), &y) in gb.iter_mut().zip(xa).zip(xb) {
            *g -= scale * (x - y).signum_or_zero();
        }
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f32;
}

impl SignumOrZero for f32 {
    fn signum_or_zero(self) -> f32 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

pub(super) fn backward_bce(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    logits: TensorId,
    targets: TensorId,
    gout: &[f32],
) {
    let scale = gout[0] / nodes[logits.0].data.len() as f32;
    if nodes[logits.0].requires_grad {
        let (zs, ts) = (&nodes[logits.0].data, &nodes[targets.0].data);
        let gz = grad_mut(grads, nodes, logits);
        for ((g, &z), &t) in gz.iter_mut().zip(zs).zip(ts) {
            *g += scale * (sigmoid(z) - t);
        }
    }
    if nodes[targets.0].requires_grad {
        let zs = &nodes[logits.0].data;
        let gt = grad_mut(grads, nodes, targets);
        for (g, &z) in gt.iter_mut().zip(zs) {
            *g += scale * (-z);
        }
    }
}
