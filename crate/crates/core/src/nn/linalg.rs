use crate::scalar::Scalar;

/// Row/column strides of a matrix operand.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    /// Row-major `[rows, cols]`.
    pub fn rows(cols: usize) -> Self {
        Self { rs: cols, cs: 1 }
    }

    /// Transpose of a row-major `[cols, rows]` buffer.
    pub fn transposed(rows: usize) -> Self {
        Self { rs: 1, cs: rows }
    }

    fn extent(self, r: usize, c: usize) -> usize {
        if r == 0 || c == 0 {
            0
        } else {
            (r - 1) * self.rs + (c - 1) * self.cs + 1
        }
    }
}

/// `C ← A·B + beta·C` with `A: [m, k]`, `B: [k, n]` and `C` row-major `[m, n]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    la: Layout,
    b: &[T],
    lb: Layout,
    c: &mut [T],
    beta: T,
) {
    assert!(a.len() >= la.extent(m, k), "lhs too short");
    assert!(b.len() >= lb.extent(k, n), "rhs too short");
    assert!(c.len() >= m * n, "output too short");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: extents checked above; `c` is a unique borrow.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr(),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_product() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let mut c = vec![1.0; m * n];
        matmul(m, k, n, &a, Layout::rows(k), &b, Layout::rows(n), &mut c, 1.0);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = 1.0 + (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum::<f64>();
                assert!((c[i * n + j] - want).abs() < 1e-12);
            }
        }
        // Aᵀ stored as [k, m]
        let at: Vec<f64> = (0..k * m).map(|i| a[(i % m) * k + i / m]).collect();
        let mut c2 = vec![0.0; m * n];
        matmul(m, k, n, &at, Layout::transposed(m), &b, Layout::rows(n), &mut c2, 0.0);
        for i in 0..m * n {
            assert!((c2[i] - (c[i] - 1.0)).abs() < 1e-12);
        }
    }
}
