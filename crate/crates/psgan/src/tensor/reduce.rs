//! Reductions and the moment helpers built on top of them.

use super::{
    broadcast_strides, for_each_pair, grad_mut, numel, Node, Op, Tape, TensorId, EPS,
};
use crate::error::{Error, Result};

impl Tape {
    /// Sums over `dims`, keeping them as size-1 axes.
    pub fn sum_keepdim(&mut self, a: TensorId, dims: &[usize]) -> Result<TensorId> {
        let in_shape = self.shape(a).to_vec();
        let rank = in_shape.len();
        if dims.is_empty() || dims.iter().any(|&d| d >= rank) {
            return Err(Error::invalid(
                "sum_keepdim",
                format!("dims {dims:?} invalid for rank {rank}"),
            ));
        }
        let mut seen = vec![false; rank];
        for &d in dims {
            if seen[d] {
                return Err(Error::invalid("sum_keepdim", format!("duplicate dim {d}")));
            }
            seen[d] = true;
        }
        let mut out_shape = in_shape.clone();
        for &d in dims {
            out_shape[d] = 1;
        }
        let mut out = vec![0.0f32; numel(&out_shape)];
        let stro = broadcast_strides(&in_shape, &out_shape);
        let data = self.data(a);
        // Iterate the *input* space; the output offset follows broadcast strides.
        for_each_pair(&in_shape, &stro, &stro, |ii, oi, _| {
            out[oi] += data[ii];
        });
        let req = self.requires_grad(a);
        self.push_result("sum_keepdim", out_shape, out, req, || Op::SumKeepdim { a })
    }

    /// Per-slice mean and standard deviation over `dims` (population
    /// variance, `sqrt(var + EPS)`), composed from primitive ops so the
    /// backward pass comes for free.
    pub fn moments(&mut self, x: TensorId, dims: &[usize]) -> Result<(TensorId, TensorId)> {
        let shape = self.shape(x).to_vec();
        let mut count = 1usize;
        for &d in dims {
            if d >= shape.len() {
                return Err(Error::invalid(
                    "moments",
                    format!("dim {d} out of range for shape {shape:?}"),
                ));
            }
            count *= shape[d];
        }
        let inv = 1.0 / count as f32;
        let s = self.sum_keepdim(x, dims)?;
        let mean = self.scale(s, inv)?;
        let d = self.sub(x, mean)?;
        let d2 = self.mul(d, d)?;
        let s2 = self.sum_keepdim(d2, dims)?;
        let var = self.scale(s2, inv)?;
        let veps = self.add_scalar(var, EPS)?;
        let std = self.sqrt(veps)?;
        Ok((mean, std))
    }

    /// Mean and standard deviation of `x` restricted to the active pixels of
    /// a binary mask. `x` is `[B,C,H,W]`, `mask` is `[B,1,H,W]` with values
    /// in {0,1}; statistics are per (batch, channel) over masked pixels.
    pub fn masked_moments(&mut self, x: TensorId, mask: TensorId) -> Result<(TensorId, TensorId)> {
        let xs = self.shape(x).to_vec();
        let ms = self.shape(mask).to_vec();
        if xs.len() != 4 || ms.len() != 4 || ms[1] != 1 || xs[0] != ms[0] || xs[2..] != ms[2..] {
            return Err(Error::ShapeMismatch {
                op: "masked_moments",
                lhs: xs,
                rhs: ms,
            });
        }
        let mdata = self.data(mask);
        if mdata.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("masked_moments", "mask is not binary"));
        }
        let hw = ms[2] * ms[3];
        for b in 0..ms[0] {
            let active = mdata[b * hw..(b + 1) * hw].iter().filter(|&&v| v != 0.0).count();
            if active < 2 {
                return Err(Error::DegeneratePatch { active });
            }
        }
        let xm = self.mul(x, mask)?;
        let s = self.sum_keepdim(xm, &[2, 3])?;
        let n = self.sum_keepdim(mask, &[2, 3])?;
        let mean = self.div(s, n)?;
        let d = self.sub(x, mean)?;
        let dm = self.mul(d, mask)?;
        let d2 = self.mul(dm, dm)?;
        let s2 = self.sum_keepdim(d2, &[2, 3])?;
        let var = self.div(s2, n)?;
        let veps = self.add_scalar(var, EPS)?;
        let std = self.sqrt(veps)?;
        Ok((mean, std))
    }
}

pub(super) fn backward_sum_keepdim(
    nodes: &[Node],
    grads: &mut [Option<Vec<f32>>],
    a: TensorId,
    out: TensorId,
    gout: &[f32],
) {
    if nodes[a.0].requires_grad {
        let in_shape = nodes[a.0].shape.clone();
        let stro = broadcast_strides(&in_shape, &nodes[out.0].shape);
        let ga = grad_mut(grads, nodes, a);
        for_each_pair(&in_shape, &stro, &stro, |ii, oi, _| {
            ga[ii] += gout[oi];
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(got: &[f32], want: &[f32], tol: f32) {
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() <= tol, "got {got:?}, want {want:?}");
        }
    }

    #[test]
    fn sum_keepdim_over_rows_and_all() {
        let mut t = Tape::new();
        let x = t.leaf(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let rows = t.sum_keepdim(x, &[1]).unwrap();
        assert_eq!(t.shape(rows), &[2, 1]);
        assert_eq!(t.data(rows), &[6.0, 15.0]);
        let all = t.sum_keepdim(x, &[0, 1]).unwrap();
        assert_eq!(t.data(all), &[21.0]);
        t.backward(all).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn moments_of_known_slice() {
        // Per-row stats of [[1,2,3,4]]: mean 2.5, population var 1.25.
        let mut t = Tape::new();
        let x = t
            .leaf(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0])
            .unwrap();
        let (mean, std) = t.moments(x, &[2, 3]).unwrap();
        assert_close(t.data(mean), &[2.5], 1e-6);
        assert_close(t.data(std), &[(1.25f32 + EPS).sqrt()], 1e-6);
    }

    #[test]
    fn moments_constant_slice_std_is_sqrt_eps() {
        let mut t = Tape::new();
        let x = t.leaf(&[1, 1, 2, 2], vec![3.0; 4]).unwrap();
        let (mean, std) = t.moments(x, &[2, 3]).unwrap();
        assert_close(t.data(mean), &[3.0], 1e-6);
        assert_close(t.data(std), &[EPS.sqrt()], 1e-7);
    }

    #[test]
    fn masked_moments_ignore_inactive_pixels() {
        let mut t = Tape::new();
        // Active pixels hold 2 and 4: mean 3, var 1.
        let x = t
            .leaf(&[1, 1, 2, 2], vec![100.0, 2.0, 4.0, -7.0])
            .unwrap();
        let m = t
            .constant(&[1, 1, 2, 2], vec![0.0, 1.0, 1.0, 0.0])
            .unwrap();
        let (mean, std) = t.masked_moments(x, m).unwrap();
        assert_close(t.data(mean), &[3.0], 1e-6);
        assert_close(t.data(std), &[(1.0f32 + EPS).sqrt()], 1e-6);
    }

    #[test]
    fn masked_moments_full_mask_matches_moments() {
        let mut t = Tape::new();
        let vals = vec![0.5, -1.0, 2.0, 3.5, -0.25, 1.25];
        let x = t.leaf(&[1, 1, 2, 3], vals.clone()).unwrap();
        let m = t.full(&[1, 1, 2, 3], 1.0).unwrap();
        let (mm, ms) = t.masked_moments(x, m).unwrap();
        let x2 = t.leaf(&[1, 1, 2, 3], vals).unwrap();
        let (um, us) = t.moments(x2, &[2, 3]).unwrap();
        assert_close(t.data(mm), t.data(um).to_vec().as_slice(), 1e-6);
        assert_close(t.data(ms), t.data(us).to_vec().as_slice(), 1e-6);
    }

    #[test]
    fn masked_moments_degenerate_mask_errors() {
        let mut t = Tape::new();
        let x = t.leaf(&[1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let one = t
            .constant(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 0.0])
            .unwrap();
        match t.masked_moments(x, one) {
            Err(Error::DegeneratePatch { active: 1 }) => {}
            other => panic!("expected DegeneratePatch, got {other:?}"),
        }
        let none = t.constant(&[1, 1, 2, 2], vec![0.0; 4]).unwrap();
        assert!(matches!(
            t.masked_moments(x, none),
            Err(Error::DegeneratePatch { active: 0 })
        ));
    }

    #[test]
    fn masked_moments_reject_non_binary_mask() {
        let mut t = Tape::new();
        let x = t.leaf(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let m = t.constant(&[1, 1, 1, 2], vec![0.5, 1.0]).unwrap();
        assert!(t.masked_moments(x, m).is_err());
    }
}
