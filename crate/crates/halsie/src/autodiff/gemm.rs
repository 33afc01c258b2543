//! Small dense matrix kernels backing the convolution ops.
//!
//! All matrices are row-major. Every kernel accumulates into `c`, and
//! parallel variants split `c` by rows, so results are bit-identical for
//! any thread count.

use super::threads;
use super::Scalar;

/// Work size below which threading is never worth it.
const PAR_THRESHOLD: usize = 1 << 15;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row = |ci: &mut [T], i: usize| {
        let arow = &a[i * k..(i + 1) * k];
        for (l, &ail) in arow.iter().enumerate() {
            if ail == T::zero() {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (cv, &bv) in ci.iter_mut().zip(brow) {
                *cv += ail * bv;
            }
        }
    };
    match threads::pool() {
        Some(pool) if m * k * n >= PAR_THRESHOLD && m > 1 => pool.install(|| {
            use rayon::prelude::*;
            c.par_chunks_mut(n).enumerate().for_each(|(i, ci)| row(ci, i));
        }),
        _ => {
            for (i, ci) in c.chunks_mut(n).enumerate() {
                row(ci, i);
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ` (rows of `a` dotted with rows of `b`)
pub fn gemm_abt<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let row = |ci: &mut [T], i: usize| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, cv) in ci.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *cv += acc;
        }
    };
    match threads::pool() {
        Some(pool) if m * k * n >= PAR_THRESHOLD && m > 1 => pool.install(|| {
            use rayon::prelude::*;
            c.par_chunks_mut(n).enumerate().for_each(|(i, ci)| row(ci, i));
        }),
        _ => {
            for (i, ci) in c.chunks_mut(n).enumerate() {
                row(ci, i);
            }
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn gemm_atb<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row = |ci: &mut [T], l: usize| {
        for i in 0..k {
            let ail = a[i * m + l];
            if ail == T::zero() {
                continue;
            }
            let brow = &b[i * n..(i + 1) * n];
            for (cv, &bv) in ci.iter_mut().zip(brow) {
                *cv += ail * bv;
            }
        }
    };
    match threads::pool() {
        Some(pool) if m * k * n >= PAR_THRESHOLD && m > 1 => pool.install(|| {
            use rayon::prelude::*;
            c.par_chunks_mut(n).enumerate().for_each(|(l, ci)| row(ci, l));
        }),
        _ => {
            for (l, ci) in c.chunks_mut(n).enumerate() {
                row(ci, l);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_ref(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    c[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn kernels_agree_with_reference() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 1.3).cos()).collect();
        let want = dense_ref(m, k, n, &a, &b);

        let mut c = vec![0.0; m * n];
        gemm_nn(m, k, n, &a, &b, &mut c);
        assert_eq!(c, want);

        // b transposed: bt[n×k]
        let mut bt = vec![0.0; n * k];
        for l in 0..k {
            for j in 0..n {
                bt[j * k + l] = b[l * n + j];
            }
        }
        let mut c = vec![0.0; m * n];
        gemm_abt(m, n, k, &a, &bt, &mut c);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // a transposed: at[k×m]
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for l in 0..k {
                at[l * m + i] = a[i * k + l];
            }
        }
        let mut c = vec![0.0; m * n];
        gemm_atb(m, k, n, &at, &b, &mut c);
        assert_eq!(c, want);
    }
}
