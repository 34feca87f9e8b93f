//! Thin row-major wrapper over `matrixmultiply::sgemm`.

/// C = alpha * op(A) op(B) + beta * C with row-major buffers.
///
/// `op(A)` is `m x k`; when `ta` is set, `a` holds the `k x m` transpose.
/// Likewise for `b` (`k x n`). `c` is `m x n`.
#[allow(clippy::too_many_arguments)]
pub fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    ta: bool,
    b: &[f32],
    tb: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert!(a.len() >= m * k, "sgemm: A buffer too small");
    assert!(b.len() >= k * n, "sgemm: B buffer too small");
    assert!(c.len() >= m * n, "sgemm: C buffer too small");
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
