//! Small matmul kernels used by the conv/dense layers.
//!
//! All variants accumulate along k in ascending order, so results do not
//! depend on the rayon thread count (rows are independent).

use rayon::prelude::*;

/// Row-parallel threshold: below this many output elements the parallel
/// dispatch overhead dominates.
const PAR_MIN_ELEMS: usize = 1 << 16;

/// C[m,n] = sum_k A[m,k] * B[k,n]
pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row = |i: usize, c_row: &mut [f32]| {
        c_row.fill(0.0);
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aik * bv;
            }
        }
    };
    if m * n >= PAR_MIN_ELEMS && rayon::current_num_threads() > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(i, cr)| row(i, cr));
    } else {
        for (i, cr) in c.chunks_mut(n).enumerate() {
            row(i, cr);
        }
    }
}

/// C[m,n] = sum_k A[m,k] * B[n,k]  (B transposed; both operands row-major)
pub fn matmul_abt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let row = |i: usize, c_row: &mut [f32]| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *cv = acc;
        }
    };
    if m * n >= PAR_MIN_ELEMS && rayon::current_num_threads() > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(i, cr)| row(i, cr));
    } else {
        for (i, cr) in c.chunks_mut(n).enumerate() {
            row(i, cr);
        }
    }
}

/// C[k,n] = sum_m A[m,k] * B[m,n]  (A transposed)
pub fn matmul_atb(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    c.fill(0.0);
    // Sequential over m keeps accumulation order fixed; the inner axpy is
    // contiguous over n.
    for mm in 0..m {
        let a_row = &a[mm * k..(mm + 1) * k];
        let b_row = &b[mm * n..(mm + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for kk in 0..k {
                    c[i * n + j] += a[i * k + kk] * b[kk * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let (m, k, n) = (5, 7, 9);
        let a: Vec<f32> = (0..m * k).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32 * 0.21).cos()).collect();
        let want = naive(&a, &b, m, k, n);

        let mut c = vec![0.0; m * n];
        matmul(&a, &b, m, k, n, &mut c);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-4));

        // A * B^T with B stored transposed.
        let mut bt = vec![0.0; k * n];
        for kk in 0..k {
            for j in 0..n {
                bt[j * k + kk] = b[kk * n + j];
            }
        }
        let mut c2 = vec![0.0; m * n];
        matmul_abt(&a, &bt, m, k, n, &mut c2);
        assert!(c2.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-4));

        // A^T * D where A is [m,k] and D is [m,n].
        let d: Vec<f32> = (0..m * n).map(|i| (i as f32 * 0.11).sin()).collect();
        let mut c3 = vec![0.0; k * n];
        matmul_atb(&a, &d, m, k, n, &mut c3);
        let mut want_t = vec![0.0; k * n];
        for kk in 0..k {
            for j in 0..n {
                for mm in 0..m {
                    want_t[kk * n + j] += a[mm * k + kk] * d[mm * n + j];
                }
            }
        }
        assert!(c3.iter().zip(&want_t).all(|(x, y)| (x - y).abs() < 1e-4));
    }
}
