//! Raw matrix kernels over flat slices.
//!
//! Loop orders are chosen so the inner loop runs over contiguous memory and
//! autovectorizes. All kernels accumulate (`dst += ...`) so the backward pass
//! can reuse them for gradient accumulation.

use super::Real;

/// dst[m,n] += a[m,k] * b[k,n]
pub fn mm_nn_acc<F: Real>(dst: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(dst.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for i in 0..m {
        let dst_row = &mut dst[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (d, &bv) in dst_row.iter_mut().zip(b_row) {
                *d = *d + aip * bv;
            }
        }
    }
}

/// dst[m,n] += a[m,k] * b[n,k]^T  (dot products of rows)
pub fn mm_nt_acc<F: Real>(dst: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(dst.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let dst_row = &mut dst[i * n..(i + 1) * n];
        for (j, d) in dst_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s = F::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                s = s + av * bv;
            }
            *d = *d + s;
        }
    }
}

/// dst[k,n] += a[m,k]^T * b[m,n]
pub fn mm_tn_acc<F: Real>(dst: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(dst.len(), k * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let dst_row = &mut dst[p * n..(p + 1) * n];
            for (d, &bv) in dst_row.iter_mut().zip(b_row) {
                *d = *d + av * bv;
            }
        }
    }
}

/// Stable row softmax: out rows are nonnegative and sum to 1.
pub fn softmax_rows<F: Real>(dst: &mut [F], src: &[F], rows: usize, cols: usize) {
    debug_assert_eq!(src.len(), rows * cols);
    for r in 0..rows {
        let s = &src[r * cols..(r + 1) * cols];
        let d = &mut dst[r * cols..(r + 1) * cols];
        softmax_row(d, s);
    }
}

/// Stable softmax of one row (max-subtraction).
pub fn softmax_row<F: Real>(dst: &mut [F], src: &[F]) {
    let mut mx = src[0];
    for &v in src {
        if v > mx {
            mx = v;
        }
    }
    let mut sum = F::zero();
    for (d, &v) in dst.iter_mut().zip(src) {
        let e = (v - mx).exp();
        *d = e;
        sum = sum + e;
    }
    let inv = F::one() / sum;
    for d in dst.iter_mut() {
        *d = *d * inv;
    }
}

/// log(sum(exp(row))) with max-subtraction.
pub fn logsumexp_row<F: Real>(src: &[F]) -> F {
    let mut mx = src[0];
    for &v in src {
        if v > mx {
            mx = v;
        }
    }
    let mut sum = F::zero();
    for &v in src {
        sum = sum + (v - mx).exp();
    }
    mx + sum.ln()
}

/// GELU (tanh approximation) value and derivative.
#[inline]
pub fn gelu_val_grad<F: Real>(x: F) -> (F, F) {
    let c = F::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = F::from_f64(0.044715);
    let half = F::from_f64(0.5);
    let one = F::one();
    let three = F::from_f64(3.0);
    let x2 = x * x;
    let u = c * (x + a * x * x2);
    let t = u.tanh();
    let val = half * x * (one + t);
    let du = c * (one + three * a * x2);
    let grad = half * (one + t) + half * x * (one - t * t) * du;
    (val, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mm_nn_hand_case() {
        // [[1,2],[3,4]] * [[0],[1]] = [[2],[4]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [0.0, 1.0];
        let mut c = [0.0; 2];
        mm_nn_acc(&mut c, &a, &b, 2, 2, 1);
        assert_eq!(c, [2.0, 4.0]);
    }

    #[test]
    fn transposed_kernels_agree_with_explicit_transpose() {
        let m = 3;
        let k = 4;
        let n = 2;
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64) * 0.7 - 2.0).collect();
        // reference c = a*b
        let mut c_ref = vec![0.0; m * n];
        mm_nn_acc(&mut c_ref, &a, &b, m, k, n);
        // via nt: b stored transposed [n,k]
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c_nt = vec![0.0; m * n];
        mm_nt_acc(&mut c_nt, &a, &bt, m, k, n);
        for (x, y) in c_ref.iter().zip(&c_nt) {
            assert!((x - y).abs() < 1e-12);
        }
        // via tn: a stored transposed [k,m], result aT^T*b
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut c_tn = vec![0.0; m * n];
        mm_tn_acc(&mut c_tn, &at, &b, k, m, n);
        for (x, y) in c_ref.iter().zip(&c_tn) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_row_stability() {
        let mut out = [0.0f64; 2];
        softmax_row(&mut out, &[1000.0, 0.0]);
        assert!((out[0] - 1.0).abs() < 1e-12);
        assert!(out[1].abs() < 1e-12);
    }

    #[test]
    fn gelu_derivative_matches_fd() {
        for &x in &[-2.5f64, -0.7, 0.0, 0.3, 1.9] {
            let h = 1e-6;
            let (_, g) = gelu_val_grad(x);
            let (vp, _) = gelu_val_grad(x + h);
            let (vm, _) = gelu_val_grad(x - h);
            let fd = (vp - vm) / (2.0 * h);
            assert!((g - fd).abs() < 1e-8, "x={x} g={g} fd={fd}");
        }
    }
}
