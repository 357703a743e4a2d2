//! Dense kernels shared by the Q-network and LinUCB.

/// `c[m×n] = a[m×k] · b[k×n] + beta · c`, all row-major.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: slice lengths checked above; strides describe dense row-major storage.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// In-place inverse of a symmetric positive-definite matrix via Cholesky.
/// Returns `false` if the matrix is not positive definite.
pub(crate) fn spd_inverse(dim: usize, a: &[f64], out: &mut [f64]) -> bool {
    let mut l = alloc::vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = a[i * dim + j];
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return false;
                }
                l[i * dim + i] = libm::sqrt(s);
            } else {
                l[i * dim + j] = s / l[j * dim + j];
            }
        }
    }
    // inv(L) column by column, then inv(A) = inv(L)^T inv(L)
    let mut linv = alloc::vec![0.0; dim * dim];
    for col in 0..dim {
        for i in col..dim {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                s -= l[i * dim + k] * linv[k * dim + col];
            }
            linv[i * dim + col] = s / l[i * dim + i];
        }
    }
    for i in 0..dim {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..dim {
                s += linv[k * dim + i] * linv[k * dim + j];
            }
            out[i * dim + j] = s;
            out[j * dim + i] = s;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: alloc::vec::Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: alloc::vec::Vec<f64> = (0..k * n).map(|i| libm::sin(i as f64)).collect();
        let mut c = alloc::vec![1.0; m * n];
        gemm(m, k, n, &a, &b, 1.0, &mut c);
        for i in 0..m {
            for j in 0..n {
                let mut s = 1.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                assert!((c[i * n + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spd_inverse_of_rank_one_update() {
        let x = [1.0, 2.0, -1.0];
        let mut a = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                a[i * 3 + j] = x[i] * x[j] + if i == j { 1.0 } else { 0.0 };
            }
        }
        let mut inv = [0.0; 9];
        assert!(spd_inverse(3, &a, &mut inv));
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                assert!((s - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        let not_pd = [1.0, 2.0, 2.0, 1.0];
        assert!(!spd_inverse(2, &not_pd, &mut [0.0; 4]));
    }
}
