//! Complex matrices, principal SVD, and the DFT beam codebook.
//!
//! Entries are interleaved (re, im) f64 pairs, row-major. Only the principal
//! singular triple is ever needed, so the SVD is a power iteration on the
//! smaller Gram matrix with a hard iteration cap.

use crate::error::{Error, Result};

/// One complex number as a (re, im) pair.
pub type C64 = (f64, f64);

#[inline]
pub fn cadd(a: C64, b: C64) -> C64 {
    (a.0 + b.0, a.1 + b.1)
}

#[inline]
pub fn cmul(a: C64, b: C64) -> C64 {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

#[inline]
pub fn conj(a: C64) -> C64 {
    (a.0, -a.1)
}

#[inline]
pub fn cabs2(a: C64) -> f64 {
    a.0 * a.0 + a.1 * a.1
}

#[inline]
pub fn cexp_j(theta: f64) -> C64 {
    (theta.cos(), theta.sin())
}

#[inline]
pub fn cscale(s: f64, a: C64) -> C64 {
    (s * a.0, s * a.1)
}

/// Dense complex matrix, interleaved (re, im) f64 entries, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMatrix { rows, cols, entries: vec![0.0; 2 * rows * cols] }
    }

    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != 2 * rows * cols {
            return Err(Error::Dimension(format!(
                "complex matrix {}x{} needs {} floats, got {}",
                rows,
                cols,
                2 * rows * cols,
                entries.len()
            )));
        }
        Ok(ComplexMatrix { rows, cols, entries })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> C64 {
        let i = 2 * (r * self.cols + c);
        (self.entries[i], self.entries[i + 1])
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: C64) {
        let i = 2 * (r * self.cols + c);
        self.entries[i] = v.0;
        self.entries[i + 1] = v.1;
    }

    pub fn column(&self, c: usize) -> Vec<C64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn set_column(&mut self, c: usize, col: &[C64]) {
        for (r, &v) in col.iter().enumerate() {
            self.set(r, c, v);
        }
    }

    pub fn frob_norm_sq(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum()
    }

    /// y = A x
    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![(0.0, 0.0); self.rows];
        for r in 0..self.rows {
            let mut acc = (0.0, 0.0);
            for c in 0..self.cols {
                acc = cadd(acc, cmul(self.get(r, c), x[c]));
            }
            y[r] = acc;
        }
        y
    }

    /// y = A^H x
    pub fn mul_vec_adjoint(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![(0.0, 0.0); self.cols];
        for c in 0..self.cols {
            let mut acc = (0.0, 0.0);
            for r in 0..self.rows {
                acc = cadd(acc, cmul(conj(self.get(r, c)), x[r]));
            }
            y[c] = acc;
        }
        y
    }

    /// C = A^H B
    pub fn adjoint_mul(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.rows != other.rows {
            return Err(Error::Dimension(format!(
                "adjoint_mul {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = ComplexMatrix::zeros(self.cols, other.cols);
        for i in 0..self.cols {
            for j in 0..other.cols {
                let mut acc = (0.0, 0.0);
                for r in 0..self.rows {
                    acc = cadd(acc, cmul(conj(self.get(r, i)), other.get(r, j)));
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }
}

pub fn vec_norm(x: &[C64]) -> f64 {
    x.iter().map(|&v| cabs2(v)).sum::<f64>().sqrt()
}

pub fn vec_dot_adjoint(a: &[C64], b: &[C64]) -> C64 {
    let mut acc = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        acc = cadd(acc, cmul(conj(x), y));
    }
    acc
}

fn normalize(x: &mut [C64]) -> f64 {
    let n = vec_norm(x);
    if n > 0.0 {
        let inv = 1.0 / n;
        for v in x.iter_mut() {
            *v = cscale(inv, *v);
        }
    }
    n
}

/// Rotate a vector's global phase so its largest-magnitude entry is
/// real-positive (deterministic sign/phase convention).
pub fn fix_phase(u: &mut [C64]) -> C64 {
    let mut best = 0usize;
    let mut best_mag = -1.0;
    for (i, &v) in u.iter().enumerate() {
        let m = cabs2(v);
        if m > best_mag {
            best_mag = m;
            best = i;
        }
    }
    let pivot = u[best];
    let mag = cabs2(pivot).sqrt();
    if mag == 0.0 {
        return (1.0, 0.0);
    }
    let rot = cscale(1.0 / mag, conj(pivot));
    for v in u.iter_mut() {
        *v = cmul(rot, *v);
    }
    rot
}

/// Principal singular triple of `h`: largest singular value sigma1 and the
/// corresponding unit left/right singular vectors.
///
/// Power iteration runs on the smaller of h^H h and h h^H, capped at 500
/// iterations with a 1e-12 relative eigenvalue convergence threshold. The
/// phase convention makes the largest-magnitude entry of u1 real-positive.
/// An all-zero matrix is degenerate: sigma1 = 0, u1 = e1, v1 = e1.
pub fn svd_principal(h: &ComplexMatrix) -> Result<(f64, Vec<C64>, Vec<C64>)> {
    let (m, n) = (h.rows(), h.cols());
    if m == 0 || n == 0 {
        return Err(Error::Dimension("svd_principal of empty matrix".into()));
    }
    if !h.entries().iter().all(|v| v.is_finite()) {
        return Err(Error::Dimension("svd_principal requires finite entries".into()));
    }
    if h.frob_norm_sq() == 0.0 {
        let mut u = vec![(0.0, 0.0); m];
        let mut v = vec![(0.0, 0.0); n];
        u[0] = (1.0, 0.0);
        v[0] = (1.0, 0.0);
        return Ok((0.0, u, v));
    }

    const MAX_ITERS: usize = 500;
    const TOL: f64 = 1e-12;

    // iterate on the smaller Gram operator
    let iterate_right = n <= m; // v-space iteration uses h^H h (n x n)
    let dim = if iterate_right { n } else { m };

    // deterministic, generic start vector
    let mut rng = crate::rng::SplitMix64::stream(0x5fd5, &[dim as u64, m as u64, n as u64]);
    let mut x: Vec<C64> = (0..dim).map(|_| (rng.next_normal(), rng.next_normal())).collect();
    normalize(&mut x);

    for _ in 0..MAX_ITERS {
        // y = G x where G = h^H h (right) or h h^H (left)
        let mut y = if iterate_right {
            h.mul_vec_adjoint(&h.mul_vec(&x))
        } else {
            h.mul_vec(&h.mul_vec_adjoint(&x))
        };
        if normalize(&mut y) == 0.0 {
            break;
        }
        // G is Hermitian PSD, so successive iterates do not rotate in phase
        // and the plain vector delta is a valid convergence measure.
        let delta: f64 = x
            .iter()
            .zip(&y)
            .map(|(a, b)| cabs2((a.0 - b.0, a.1 - b.1)))
            .sum::<f64>()
            .sqrt();
        x = y;
        if delta <= TOL {
            break;
        }
    }

    // recover the pair
    let (sigma, mut u, mut v) = if iterate_right {
        let hv = h.mul_vec(&x);
        let s = vec_norm(&hv);
        let mut u = hv;
        normalize(&mut u);
        (s, u, x)
    } else {
        let hu = h.mul_vec_adjoint(&x);
        let s = vec_norm(&hu);
        let mut v = hu;
        normalize(&mut v);
        (s, x, v)
    };

    // phase convention on u1, mirrored onto v1 so h v1 = sigma u1 still holds
    let rot = fix_phase(&mut u);
    for w in v.iter_mut() {
        *w = cmul(rot, *w);
    }
    Ok((sigma, u, v))
}

/// n x n unitary DFT codebook: column k has entries
/// exp(-j 2 pi m k / n) / sqrt(n).
pub fn dft_codebook(n: usize) -> Result<ComplexMatrix> {
    if n == 0 {
        return Err(Error::Dimension("dft_codebook requires n >= 1".into()));
    }
    let mut out = ComplexMatrix::zeros(n, n);
    let scale = 1.0 / (n as f64).sqrt();
    for m in 0..n {
        for k in 0..n {
            let phase = -2.0 * std::f64::consts::PI * (m as f64) * (k as f64) / (n as f64);
            out.set(m, k, cscale(scale, cexp_j(phase)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Test-only oracle: 200 fixed power-iteration steps on h h^H (the
    /// opposite Gram operator from the production path), raw arithmetic.
    fn power_iteration_left_oracle(h: &ComplexMatrix, steps: usize) -> (f64, Vec<C64>) {
        let m = h.rows();
        let mut u: Vec<C64> = (0..m)
            .map(|i| (((i * 37 + 11) as f64 * 0.7).sin(), ((i * 53 + 5) as f64 * 0.3).cos()))
            .collect();
        normalize(&mut u);
        let mut lambda = 0.0;
        for _ in 0..steps {
            let y = h.mul_vec(&h.mul_vec_adjoint(&u));
            lambda = vec_dot_adjoint(&u, &y).0;
            u = y;
            normalize(&mut u);
        }
        (lambda.max(0.0).sqrt(), u)
    }

    fn random_matrix(m: usize, n: usize, seed: u64) -> ComplexMatrix {
        let mut rng = crate::rng::SplitMix64::stream(seed, &[m as u64, n as u64]);
        let mut h = ComplexMatrix::zeros(m, n);
        for r in 0..m {
            for c in 0..n {
                h.set(r, c, (rng.next_normal(), rng.next_normal()));
            }
        }
        h
    }

    #[test]
    fn diagonal_case() {
        let mut h = ComplexMatrix::zeros(2, 2);
        h.set(0, 0, (3.0, 0.0));
        h.set(1, 1, (1.0, 0.0));
        let (s, u, _v) = svd_principal(&h).unwrap();
        assert!((s - 3.0).abs() < 1e-9);
        assert!((u[0].0 - 1.0).abs() < 1e-9 && u[0].1.abs() < 1e-12);
        assert!(cabs2(u[1]) < 1e-18);
    }

    #[test]
    fn rank_one_construction_recovered() {
        // h = u s v^H with s = 2
        let m = 5;
        let n = 3;
        let mut rng = crate::rng::SplitMix64::stream(42, &[7]);
        let mut u0: Vec<C64> = (0..m).map(|_| (rng.next_normal(), rng.next_normal())).collect();
        let mut v0: Vec<C64> = (0..n).map(|_| (rng.next_normal(), rng.next_normal())).collect();
        normalize(&mut u0);
        normalize(&mut v0);
        let s0 = 2.0;
        let mut h = ComplexMatrix::zeros(m, n);
        for r in 0..m {
            for c in 0..n {
                h.set(r, c, cscale(s0, cmul(u0[r], conj(v0[c]))));
            }
        }
        let (s, u, v) = svd_principal(&h).unwrap();
        assert!((s - s0).abs() < 1e-9, "sigma {s}");
        // up to phase: |<u, u0>| = 1
        let du = vec_dot_adjoint(&u, &u0);
        assert!((cabs2(du).sqrt() - 1.0).abs() < 1e-9);
        let dv = vec_dot_adjoint(&v, &v0);
        assert!((cabs2(dv).sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_matrix_degenerate_convention() {
        let h = ComplexMatrix::zeros(3, 4);
        let (s, u, v) = svd_principal(&h).unwrap();
        assert_eq!(s, 0.0);
        assert_eq!(u[0], (1.0, 0.0));
        assert_eq!(v[0], (1.0, 0.0));
    }

    #[test]
    fn random_8x16_agrees_with_left_power_iteration_oracle() {
        let h = random_matrix(8, 16, 99);
        let (s, u, v) = svd_principal(&h).unwrap();
        let (s_oracle, u_oracle) = power_iteration_left_oracle(&h, 200);
        assert!((s - s_oracle).abs() / s_oracle < 1e-9, "s {s} vs {s_oracle}");
        let align = cabs2(vec_dot_adjoint(&u, &u_oracle)).sqrt();
        assert!(align > 1.0 - 1e-8, "|u^H u_oracle| = {align}");
        // residual: h v = s u
        let hv = h.mul_vec(&v);
        let mut resid: f64 = 0.0;
        for (a, b) in hv.iter().zip(&u) {
            let d = (a.0 - s * b.0, a.1 - s * b.1);
            resid += cabs2(d);
        }
        assert!(resid.sqrt() < 1e-9, "residual {}", resid.sqrt());
        // unit norms
        assert!((vec_norm(&u) - 1.0).abs() < 1e-12);
        assert!((vec_norm(&v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigma_squared_is_largest_gram_eigenvalue() {
        for seed in 0..5 {
            let h = random_matrix(6, 9, 1000 + seed);
            let (s, _u, v) = svd_principal(&h).unwrap();
            // h^H h v = s^2 v
            let ghv = h.mul_vec_adjoint(&h.mul_vec(&v));
            let lambda = vec_dot_adjoint(&v, &ghv).0;
            assert!((lambda - s * s).abs() / (s * s) < 1e-9);
        }
    }

    #[test]
    fn phase_convention_pivot_real_positive() {
        let h = random_matrix(8, 8, 5);
        let (_s, u, _v) = svd_principal(&h).unwrap();
        let mut best = 0usize;
        let mut best_mag = -1.0;
        for (i, &x) in u.iter().enumerate() {
            if cabs2(x) > best_mag {
                best_mag = cabs2(x);
                best = i;
            }
        }
        assert!(u[best].1.abs() < 1e-10, "pivot imag {}", u[best].1);
        assert!(u[best].0 > 0.0);
    }

    #[test]
    fn dft_n2_hand_case() {
        let a = dft_codebook(2).unwrap();
        let r = 1.0 / 2.0f64.sqrt();
        assert!((a.get(0, 0).0 - r).abs() < 1e-15);
        assert!((a.get(1, 0).0 - r).abs() < 1e-15);
        assert!((a.get(0, 1).0 - r).abs() < 1e-15);
        assert!((a.get(1, 1).0 + r).abs() < 1e-12);
        assert!(a.get(1, 1).1.abs() < 1e-12);
    }

    #[test]
    fn dft_unitary_and_unit_modulus() {
        for n in [4usize, 8] {
            let a = dft_codebook(n).unwrap();
            let g = a.adjoint_mul(&a).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    let v = g.get(i, j);
                    assert!((v.0 - expect).abs() < 1e-12, "G[{i}{j}] = {v:?}");
                    assert!(v.1.abs() < 1e-12);
                }
            }
            // every entry has modulus 1/sqrt(n); columns unit norm
            let want = 1.0 / (n as f64);
            for r in 0..n {
                for c in 0..n {
                    assert!((cabs2(a.get(r, c)) - want).abs() < 1e-12);
                }
            }
            for c in 0..n {
                let col = a.column(c);
                assert!((vec_norm(&col) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dft_zero_size_rejected() {
        assert!(dft_codebook(0).is_err());
    }
}
