//! Pointwise and broadcast ops.

use rand::Rng;

use super::{
    broadcast_shape, broadcast_strides, for_each_pair, grad_mut, numel, Node, Op, Tape, TensorId,
};
use crate::error::{Error, Result};

impl Tape {
    fn binary(
        &mut self,
        name: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f32, f32) -> f32,
        op: impl FnOnce() -> Op,
    ) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape = broadcast_shape(name, sa, sb)?;
        let (da, db) = (self.data(a), self.data(b));
        let mut out = vec![0.0f32; numel(&out_shape)];
        if sa == sb {
            for ((o, &x), &y) in out.iter_mut().zip(da).zip(db) {
                *o = f(x, y);
            }
        } else {
            let stra = broadcast_strides(&out_shape, sa);
            let strb = broadcast_strides(&out_shape, sb);
            for_each_pair(&out_shape, &stra, &strb, |oi, ai, bi| {
                out[oi] = f(da[ai], db[bi]);
            });
        }
        let req = self.requires_grad(a) || self.requires_grad(b);
        self.push_result(name, out_shape, out, req, op)
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: TensorId,
        f: impl Fn(f32) -> f32,
        op: impl FnOnce() -> Op,
    ) -> Result<TensorId> {
        let out = self.data(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let req = self.requires_grad(a);
        self.push_result(name, shape, out, req, op)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("add", a, b, |x, y| x + y, || Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("sub", a, b, |x, y| x - y, || Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("mul", a, b, |x, y| x * y, || Op::Mul { a, b })
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("div", a, b, |x, y| x / y, || Op::Div { a, b })
    }

    pub fn scale(&mut self, a: TensorId, c: f32) -> Result<TensorId> {
        self.unary("scale", a, |x| x * c, || Op::Scale { a, c })
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f32) -> Result<TensorId> {
        self.unary("add_scalar", a, |x| x + c, || Op::AddScalar { a })
    }

    pub fn sqrt(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary("sqrt", a, |x| x.sqrt(), || Op::Sqrt { a })
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary("relu", a, |x| x.max(0.0), || Op::Relu { a })
    }

    pub fn leaky_relu(&mut self, a: TensorId, slope: f32) -> Result<TensorId> {
        self.unary(
            "leaky_relu",
            a,
            |x| if x >= 0.0 { x } else { slope * x },
            || Op::LeakyRelu { a, slope },
        )
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary("tanh", a, |x| x.tanh(), || Op::Tanh { a })
    }

    /// Inverted dropout: survivors are scaled by 1/(1-p) so the expected
    /// value is unchanged. Draws one uniform per element from `rng`.
    pub fn dropout(&mut self, a: TensorId, p: f32, rng: &mut impl Rng) -> Result<TensorId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout", format!("p={p} not in [0,1)")));
        }
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f32> = (0..self.numel(a))
            .map(|_| {
                if rng.gen::<f32>() < p {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let out: Vec<f32> = self
            .data(a)
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let shape = self.shape(a).to_vec();
        let req = self.requires_grad(a);
        self.push_result("dropout", shape, out, req, || Op::Dropout { a, mask })
    }

    /// Concatenates two NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3] {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                lhs: sa,
                rhs: sb,
            });
        }
        let (batch, ca, cb, hw) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
        let mut out = Vec::with_capacity(batch * (ca + cb) * hw);
        let (da, db) = (self.data(a), self.data(b));
        for i in 0..batch {
            out.extend_from_slice(&da[i * ca * hw..(i + 1) * ca * hw]);
            out.extend_from_slice(&db[i * cb * hw..(i + 1) * cb * hw]);
        }
        let shape = vec![batch, ca + cb, sa[2], sa[3]];
        let req = self.requires_grad(a) || self.requires_grad(b);
        self.push_result("concat_channels", shape, out, req, || Op::ConcatChannels {
            a,
            b,
        })
    }
}

fn backward_binary(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    a: TensorId,
    b: TensorId,
    gout: &[f32],
    da_fn: impl Fn(f32, f32) -> f32,
    db_fn: impl Fn(f32, f32) -> f32,
) {
    let out_shape = broadcast_shape("", &nodes[a.0].shape, &nodes[b.0].shape).unwrap();
    let stra = broadcast_strides(&out_shape, &nodes[a.0].shape);
    let strb = broadcast_strides(&out_shape, &nodes[b.0].shape);
    if nodes[a.0].requires_grad {
        let (xa, xb) = (&nodes[a.0].data, &nodes[b.0].data);
        let ga = grad_mut(grads, nodes, a);
        for_each_pair(&out_shape, &stra, &strb, |oi, ai, bi| {
            ga[ai] += gout[oi] * da_fn(xa[ai], xb[bi]);
        });
    }
    if nodes[b.0].requires_grad {
        let (xa, xb) = (&nodes[a.0].data, &nodes[b.0].data);
        let gb = grad_mut(grads, nodes, b);
        for_each_pair(&out_shape, &stra, &strb, |oi, ai, bi| {
            gb[bi] += gout[oi] * db_fn(xa[ai], xb[bi]);
        });
    }
}

pub(super) fn backward_add(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    a: TensorId,
    b: TensorId,
    gout: &[f32],
) {
    backward_binary(nodes, grads, a, b, gout, |_, _| 1.0, |_, _| 1.0);
}

pub(super) fn backward_sub(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    a: TensorId,
    b: TensorId,
    gout: &[f32],
) {
    backward_binary(nodes, grads, a, b, gout, |_, _| 1.0, |_, _| -1.0);
}

pub(super) fn backward_mul(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    a: TensorId,
    b: TensorId,
    gout: &[f32],
) {
    backward_binary(nodes, grads, a, b, gout, |_, y| y, |x, _| x);
}

pub(super) fn backward_div(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    a: TensorId,
    b: TensorId,
    gout: &[f32],
) {
    backward_binary(nodes, grads, a, b, gout, |_, y| 1.0 / y, |x, y| -x / (y * y));
}

pub(super) fn backward_scale(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    a: TensorId,
    c: f32,
    gout: &[f32],
) {
    if nodes[a.0].requires_grad {
        let ga = grad_mut(grads, nodes, a);
        for (g, &go) in ga.iter_mut().zip(gout) {
            *g += c * go;
        }
    }
}

pub(super) fn backward_add_scalar(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    a: TensorId,
    gout: &[f32],
) {
    backward_scale(nodes, grads, a, 1.0, gout);
}

pub(super) fn backward_sqrt(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    a: TensorId,
    out: TensorId,
    gout: &[f32],
) {
    if nodes[a.0].requires_grad {
        let y = &nodes[out.0].data;
        let ga = grad_mut(grads, nodes, a);
        for ((g, &go), &yv) in ga.iter_mut().zip(gout).zip(y) {
            *g += go * 0.5 / yv;
        }
    }
}

pub(super) fn backward_relu(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    a: TensorId,
    gout: &[f32],
) {
    if nodes[a.0].requires_grad {
        let x = &nodes[a.0].data;
        let ga = grad_mut(grads, nodes, a);
        for ((g, &go), &xv) in ga.iter_mut().zip(gout).zip(x) {
            if xv > 0.0 {
                *g += go;
            }
        }
    }
}

pub(super) fn backward_leaky_relu(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    a: TensorId,
    slope: f32,
    gout: &[f32],
) {
    if nodes[a.0].requires_grad {
        let x = &nodes[a.0].data;
        let ga = grad_mut(grads, nodes, a);
        for ((g, &go), &xv) in ga.iter_mut().zip(gout).zip(x) {
            *g += if xv >= 0.0 { go } else { slope * go };
        }
    }
}

pub(super) fn backward_tanh(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    a: TensorId,
    out: TensorId,
    gout: &[f32],
) {
    if nodes[a.0].requires_grad {
        let y = &nodes[out.0].data;
        let ga = grad_mut(grads, nodes, a);
        for ((g, &go), &yv) in ga.iter_mut().zip(gout).zip(y) {
            *g += go * (1.0 - yv * yv);
        }
    }
}

pub(super) fn backward_dropout(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    a: TensorId,
    mask: &[f32],
    gout: &[f32],
) {
    if nodes[a.0].requires_grad {
        let ga = grad_mut(grads, nodes, a);
        for ((g, &go), &m) in ga.iter_mut().zip(gout).zip(mask) {
            *g += go * m;
        }
    }
}

pub(super) fn backward_concat_channels(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    a: TensorId,
    b: TensorId,
    gout: &[f32],
) {
    let sa = &nodes[a.0].shape;
    let sb = &nodes[b.0].shape;
    let (batch, ca, cb, hw) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
    let chunk = (ca + cb) * hw;
    if nodes[a.0].requires_grad {
        let ga = grad_mut(grads, nodes, a);
        for i in 0..batch {
            let src = &gout[i * chunk..i * chunk + ca * hw];
            for (g, &go) in ga[i * ca * hw..(i + 1) * ca * hw].iter_mut().zip(src) {
                *g += go;
            }
        }
    }
    if nodes[b.0].requires_grad {
        let gb = grad_mut(grads, nodes, b);
        for i in 0..batch {
            let src = &gout[i * chunk + ca * hw..(i + 1) * chunk];
            for (g, &go) in gb[i * cb * hw..(i + 1) * cb * hw].iter_mut().zip(src) {
                *g += go;
            }
        }
    }
}
