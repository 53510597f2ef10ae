//! Small dense kernels on row-major `n x n` buffers.

/// Dot product with eight independent accumulators so the reduction
/// vectorizes; the summation order is fixed, so results are reproducible.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// In-place lower Cholesky factor of a symmetric matrix; the strict upper
/// triangle is zeroed. Returns the failing pivot index if the matrix is not
/// positive definite.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<(), usize> {
    debug_assert_eq!(a.len(), n * n);
    for i in 0..n {
        for j in 0..=i {
            let s = {
                let (ri, rj) = (&a[i * n..i * n + j], &a[j * n..j * n + j]);
                dot(ri, rj)
            };
            let v = a[i * n + j] - s;
            if i == j {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(i);
                }
                a[i * n + i] = v.sqrt();
            } else {
                a[i * n + j] = v / a[j * n + j];
            }
        }
        for j in i + 1..n {
            a[i * n + j] = 0.0;
        }
    }
    Ok(())
}

/// Solves `L x = b` in place (`L` lower-triangular, row-major).
pub fn solve_lower_in_place(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let s = dot(&l[i * n..i * n + i], &b[..i]);
        b[i] = (b[i] - s) / l[i * n + i];
    }
}

/// Solves `L^T x = b` in place.
pub fn solve_lower_transpose_in_place(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let xi = b[i] / l[i * n + i];
        b[i] = xi;
        // column i of L above the diagonal is row i of L^T
        for k in 0..i {
            b[k] -= l[i * n + k] * xi;
        }
    }
}

/// `(L L^T)^{-1}` as a dense row-major matrix.
pub fn cholesky_inverse(l: &[f64], n: usize) -> Vec<f64> {
    // u row c holds column c of L^{-1} (non-zero from index c on)
    let mut u = vec![0.0; n * n];
    for c in 0..n {
        let row = &mut u[c * n..(c + 1) * n];
        row[c] = 1.0 / l[c * n + c];
        for i in c + 1..n {
            let s = dot(&l[i * n + c..i * n + i], &row[c..i]);
            row[i] = -s / l[i * n + i];
        }
    }
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            // (L^{-T} L^{-1})_{ij} = sum_{k >= i} u[i][k] u[j][k]  (i >= j)
            let v = dot(&u[i * n + i..(i + 1) * n], &u[j * n + i..(j + 1) * n]);
            inv[i * n + j] = v;
            inv[j * n + i] = v;
        }
    }
    inv
}
