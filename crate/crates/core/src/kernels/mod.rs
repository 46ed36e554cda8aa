//! Raw forward/backward loops over flat buffers. Shape validation happens in the
//! graph layer; these functions assume consistent geometry.

pub(crate) mod conv;
pub(crate) mod norm;
pub(crate) mod pool;

/// `c = a·b + beta·c` on row-major buffers, with explicit (row, column) strides for
/// `a` and `b` so transposed operands need no copy.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_strides: (usize, usize),
    b: &[f32],
    b_strides: (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * a_strides.0 + k.saturating_sub(1) * a_strides.1);
    assert!(b.len() > k.saturating_sub(1) * b_strides.0 + (n - 1) * b_strides.1);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every element the kernel touches in a, b, c.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
