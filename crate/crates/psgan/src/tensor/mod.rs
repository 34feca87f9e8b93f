//! Dense f32 tensors in NCHW layout with reverse-mode autodiff.
//!
//! All tensors live on a [`Tape`]. Ops append nodes and, when any input
//! requires gradients, a record describing how to push gradients back.
//! [`Tape::backward`] walks the records in reverse and accumulates into
//! per-node gradient buffers; repeated calls keep accumulating until
//! [`Tape::zero_grad`].

mod conv;
mod elementwise;
mod gemm;
mod loss;
mod reduce;

pub use gemm::sgemm;

use crate::error::{Error, Result};

/// Epsilon added to variances before the square root.
pub const EPS: f32 = 1e-5;

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

pub(crate) struct Node {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
}

pub(crate) enum Op {
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Div { a: TensorId, b: TensorId },
    Scale { a: TensorId, c: f32 },
    AddScalar { a: TensorId },
    Sqrt { a: TensorId },
    Relu { a: TensorId },
    LeakyRelu { a: TensorId, slope: f32 },
    Tanh { a: TensorId },
    Dropout { a: TensorId, mask: Vec<f32> },
    SumKeepdim { a: TensorId },
    ConcatChannels { a: TensorId, b: TensorId },
    Conv2d {
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
        /// im2col buffers, cached only when the weight needs gradients.
        cols: Option<Vec<f32>>,
    },
    ConvTranspose2d {
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
    },
    L1Loss { a: TensorId, b: TensorId },
    BceWithLogits { logits: TensorId, targets: TensorId },
}

struct Record {
    out: TensorId,
    op: Op,
}

/// Growable autodiff tape. One per forward/backward pass in training code.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
    records: Vec<Record>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn check_finite(op: &'static str, data: &[f32]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn validate_shape(op: &'static str, shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(Error::invalid(op, format!("invalid shape {shape:?}")));
    }
    if numel(shape) != len {
        return Err(Error::invalid(
            op,
            format!("shape {shape:?} does not match {len} elements"),
        ));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            shape,
            data,
            requires_grad,
        });
        self.grads.push(None);
        id
    }

    /// Output of an op: finiteness-checked, recorded when differentiable.
    pub(crate) fn push_result(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<f32>,
        requires_grad: bool,
        op: impl FnOnce() -> Op,
    ) -> Result<TensorId> {
        check_finite(op_name, &data)?;
        let id = self.push(shape, data, requires_grad);
        if requires_grad {
            self.records.push(Record { out: id, op: op() });
        }
        Ok(id)
    }

    /// Tensor that does not take part in differentiation.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f32>) -> Result<TensorId> {
        validate_shape("constant", shape, data.len())?;
        check_finite("constant", &data)?;
        Ok(self.push(shape.to_vec(), data, false))
    }

    /// Tensor that accumulates gradients during [`Tape::backward`].
    pub fn leaf(&mut self, shape: &[usize], data: Vec<f32>) -> Result<TensorId> {
        validate_shape("leaf", shape, data.len())?;
        check_finite("leaf", &data)?;
        Ok(self.push(shape.to_vec(), data, true))
    }

    pub fn full(&mut self, shape: &[usize], value: f32) -> Result<TensorId> {
        self.constant(shape, vec![value; numel(shape)])
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: TensorId) -> &[f32] {
        &self.nodes[id.0].data
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn numel(&self, id: TensorId) -> usize {
        self.nodes[id.0].data.len()
    }

    /// Accumulated gradient, if any has been produced for this node.
    pub fn grad(&self, id: TensorId) -> Option<&[f32]> {
        self.grads[id.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    /// Reverse pass from a scalar loss. Leaf gradients accumulate across
    /// calls; intermediate gradients are consumed as the tape unwinds.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let node = &self.nodes[loss.0];
        if node.data.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be a scalar, got shape {:?}", node.shape),
            ));
        }
        if !node.requires_grad {
            return Err(Error::invalid("backward", "loss does not require grad"));
        }
        grad_mut(&mut self.grads, &self.nodes, loss)[0] += 1.0;

        for r in (0..self.records.len()).rev() {
            let out = self.records[r].out;
            let Some(gout) = self.grads[out.0].take() else {
                continue;
            };
            let nodes = &self.nodes;
            let grads = &mut self.grads;
            match &self.records[r].op {
                Op::Add { a, b } => elementwise::backward_add(nodes, grads, *a, *b, &gout),
                Op::Sub { a, b } => elementwise::backward_sub(nodes, grads, *a, *b, &gout),
                Op::Mul { a, b } => elementwise::backward_mul(nodes, grads, *a, *b, &gout),
                Op::Div { a, b } => elementwise::backward_div(nodes, grads, *a, *b, &gout),
                Op::Scale { a, c } => elementwise::backward_scale(nodes, grads, *a, *c, &gout),
                Op::AddScalar { a } => elementwise::backward_add_scalar(nodes, grads, *a, &gout),
                Op::Sqrt { a } => elementwise::backward_sqrt(nodes, grads, *a, out, &gout),
                Op::Relu { a } => elementwise::backward_relu(nodes, grads, *a, &gout),
                Op::LeakyRelu { a, slope } => {
                    elementwise::backward_leaky_relu(nodes, grads, *a, *slope, &gout)
                }
                Op::Tanh { a } => elementwise::backward_tanh(nodes, grads, *a, out, &gout),
                Op::Dropout { a, mask } => elementwise::backward_dropout(nodes, grads, *a, mask, &gout),
                Op::SumKeepdim { a } => reduce::backward_sum_keepdim(nodes, grads, *a, out, &gout),
                Op::ConcatChannels { a, b } => {
                    elementwise::backward_concat_channels(nodes, grads, *a, *b, &gout)
                }
                Op::Conv2d {
                    x,
                    w,
                    bias,
                    stride,
                    padding,
                    cols,
                } => conv::backward_conv2d(nodes, grads, *x, *w, *bias, *stride, *padding, cols, &gout),
                Op::ConvTranspose2d {
                    x,
                    w,
                    bias,
                    stride,
                    padding,
                } => conv::backward_conv2d_transpose(nodes, grads, *x, *w, *bias, *stride, *padding, &gout),
                Op::L1Loss { a, b } => loss::backward_l1(nodes, grads, *a, *b, &gout),
                Op::BceWithLogits { logits, targets } => {
                    loss::backward_bce(nodes, grads, *logits, *targets, &gout)
                }
            }
        }
        Ok(())
    }
}

/// Gradient buffer for a node, created zeroed on first use.
pub(crate) fn grad_mut<'a>(
    grads: &'a mut [Option<Vec<f32>>],
    nodes: &[Node],
    id: TensorId,
) -> &'a mut [f32] {
    let slot = &mut grads[id.0];
    if slot.is_none() {
        *slot = Some(vec![0.0; nodes[id.0].data.len()]);
    }
    slot.as_mut().unwrap()
}

/// Shape of `a op b` under NumPy-style broadcasting restricted to equal rank.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    let mut out = Vec::with_capacity(a.len());
    for (&da, &db) in a.iter().zip(b) {
        if da == db || da == 1 || db == 1 {
            out.push(da.max(db));
        } else {
            return Err(Error::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
    }
    Ok(out)
}

/// Row-major strides of `shape` with zeros where `shape` broadcasts into `out`.
pub(crate) fn broadcast_strides(out: &[usize], shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for d in (0..shape.len()).rev() {
        strides[d] = if shape[d] == 1 && out[d] > 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

/// Visits `(out_index, a_index, b_index)` for every element of `out_shape`.
pub(crate) fn for_each_pair(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out_shape.len();
    let n = numel(out_shape);
    let mut idx = vec![0usize; rank];
    let mut ai = 0usize;
    let mut bi = 0usize;
    for oi in 0..n {
        f(oi, ai, bi);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ai += sa[d];
            bi += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            ai -= sa[d] * out_shape[d];
            bi -= sb[d] * out_shape[d];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_rejects_bad_shape() {
        let mut t = Tape::new();
        assert!(t.leaf(&[2, 3], vec![0.0; 5]).is_err());
        assert!(t.leaf(&[0], vec![]).is_err());
        assert!(t.leaf(&[2], vec![1.0, f32::NAN]).is_err());
    }

    #[test]
    fn broadcast_shape_rules() {
        assert_eq!(
            broadcast_shape("t", &[2, 3, 1, 1], &[2, 1, 4, 5]).unwrap(),
            vec![2, 3, 4, 5]
        );
        assert!(broadcast_shape("t", &[2, 3], &[2, 3, 1]).is_err());
        assert!(broadcast_shape("t", &[2, 3], &[2, 4]).is_err());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(&[1], vec![3.0]).unwrap();
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[6.0]);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[12.0]);
        t.zero_grad();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut t = Tape::new();
        let x = t.leaf(&[2], vec![1.0, 2.0]).unwrap();
        let y = t.relu(x).unwrap();
        assert!(t.backward(y).is_err());
    }

    #[test]
    fn constants_produce_no_grads() {
        let mut t = Tape::new();
        let x = t.constant(&[1], vec![2.0]).unwrap();
        let c = t.constant(&[1], vec![5.0]).unwrap();
        let y = t.mul(x, c).unwrap();
        assert!(!t.requires_grad(y));
        assert!(t.backward(y).is_err());

        let l = t.leaf(&[1], vec![2.0]).unwrap();
        let z = t.mul(l, c).unwrap();
        t.backward(z).unwrap();
        assert_eq!(t.grad(l).unwrap(), &[5.0]);
        assert!(t.grad(c).is_none());
    }
}
