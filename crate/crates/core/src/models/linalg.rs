//! Row-major dense helpers on top of `matrixmultiply`.

/// `C = alpha · op(A) · op(B) + beta · C` with `op(A)` m×k, `op(B)` k×n, C m×n.
///
/// `A` is stored row-major as m×k (or k×m when `trans_a`), likewise `B`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: f64,
    a: &[f64],
    b: &[f64],
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k, "gemm: A too short");
    assert!(b.len() >= k * n, "gemm: B too short");
    assert!(c.len() >= m * n, "gemm: C too short");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the length asserts above cover every index reachable with
    // these strides, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
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

/// `Y = X · W + b` for X rows×in, W in×out.
pub(crate) fn linear(x: &[f64], w: &[f64], b: &[f64], rows: usize, d_in: usize, d_out: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(rows * d_out);
    for _ in 0..rows {
        y.extend_from_slice(&b[..d_out]);
    }
    gemm(false, false, rows, d_out, d_in, 1.0, x, w, 1.0, &mut y);
    y
}

/// Accumulate `dW += Xᵀ·dY`, `db += Σ_rows dY` and return `dX = dY·Wᵀ`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    rows: usize,
    d_in: usize,
    d_out: usize,
    want_dx: bool,
) -> Option<Vec<f64>> {
    gemm(true, false, d_in, d_out, rows, 1.0, x, dy, 1.0, dw);
    for r in 0..rows {
        for (acc, g) in db.iter_mut().zip(&dy[r * d_out..(r + 1) * d_out]) {
            *acc += g;
        }
    }
    if want_dx {
        let mut dx = vec![0.0; rows * d_in];
        gemm(false, true, rows, d_in, d_out, 1.0, dy, w, 0.0, &mut dx);
        Some(dx)
    } else {
        None
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
