//! Stack-allocated dense matrices of order at most 4.
//!
//! Every matrix in this crate is either n×n with n ≤ 2 (chart quantities on
//! the torus) or 2n×2n (the ambient pseudo-metric), so a fixed 16-slot
//! buffer covers all cases without heap traffic in the per-node loops.

use std::ops::{Index, IndexMut};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallMat {
    n: usize,
    a: [f64; MAX_ORDER * MAX_ORDER],
}

impl SmallMat {
    pub fn zeros(n: usize) -> Self {
        assert!(
            (1..=MAX_ORDER).contains(&n),
            "matrix order {n} out of range"
        );
        Self {
            n,
            a: [0.0; MAX_ORDER * MAX_ORDER],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Row-major slice of length n².
    pub fn from_row_slice(n: usize, s: &[f64]) -> Self {
        assert_eq!(s.len(), n * n);
        Self::from_fn(n, |i, j| s[i * n + j])
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn to_row_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n * self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                v.push(self[(i, j)]);
            }
        }
        v
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)])
    }

    pub fn symmetric_part(&self) -> Self {
        Self::from_fn(self.n, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    pub fn antisymmetric_part(&self) -> Self {
        Self::from_fn(self.n, |i, j| 0.5 * (self[(i, j)] - self[(j, i)]))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_fn(self.n, |i, j| s * self[(i, j)])
    }

    pub fn add(&self, o: &Self) -> Self {
        debug_assert_eq!(self.n, o.n);
        Self::from_fn(self.n, |i, j| self[(i, j)] + o[(i, j)])
    }

    pub fn sub(&self, o: &Self) -> Self {
        debug_assert_eq!(self.n, o.n);
        Self::from_fn(self.n, |i, j| self[(i, j)] - o[(i, j)])
    }

    pub fn mul(&self, o: &Self) -> Self {
        debug_assert_eq!(self.n, o.n);
        let n = self.n;
        Self::from_fn(n, |i, j| (0..n).map(|k| self[(i, k)] * o[(k, j)]).sum())
    }

    pub fn mul_vec(&self, v: &[f64]) -> [f64; MAX_ORDER] {
        let mut out = [0.0; MAX_ORDER];
        for i in 0..self.n {
            out[i] = (0..self.n).map(|k| self[(i, k)] * v[k]).sum();
        }
        out
    }

    /// vᵀ M w
    pub fn bilinear(&self, v: &[f64], w: &[f64]) -> f64 {
        let mw = self.mul_vec(w);
        (0..self.n).map(|i| v[i] * mw[i]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                m = m.max(self[(i, j)].abs());
            }
        }
        m
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    /// Solve self·x = rhs; closed form up to order 2. `None` when singular.
    pub fn solve(&self, rhs: &[f64]) -> Option<[f64; MAX_ORDER]> {
        let mut x = [0.0; MAX_ORDER];
        match self.n {
            1 => {
                let a = self[(0, 0)];
                if a == 0.0 {
                    return None;
                }
                x[0] = rhs[0] / a;
            }
            2 => {
                let (a, b, c, d) = (self[(0, 0)], self[(0, 1)], self[(1, 0)], self[(1, 1)]);
                let det = a * d - b * c;
                if det == 0.0 || !det.is_finite() {
                    return None;
                }
                x[0] = (d * rhs[0] - b * rhs[1]) / det;
                x[1] = (a * rhs[1] - c * rhs[0]) / det;
            }
            _ => return self.lu().map(|f| f.solve(rhs)),
        }
        Some(x)
    }

    /// LU factorization with partial pivoting. `None` when a pivot is exactly zero.
    pub fn lu(&self) -> Option<Lu> {
        let n = self.n;
        let mut f = *self;
        let mut perm = [0usize; MAX_ORDER];
        for (i, p) in perm.iter_mut().enumerate().take(n) {
            *p = i;
        }
        let mut sign = 1.0;
        for k in 0..n {
            let mut piv = k;
            for r in (k + 1)..n {
                if f[(r, k)].abs() > f[(piv, k)].abs() {
                    piv = r;
                }
            }
            if f[(piv, k)] == 0.0 {
                return None;
            }
            if piv != k {
                for c in 0..n {
                    let t = f[(k, c)];
                    f[(k, c)] = f[(piv, c)];
                    f[(piv, c)] = t;
                }
                perm.swap(k, piv);
                sign = -sign;
            }
            for r in (k + 1)..n {
                let l = f[(r, k)] / f[(k, k)];
                f[(r, k)] = l;
                for c in (k + 1)..n {
                    f[(r, c)] -= l * f[(k, c)];
                }
            }
        }
        Some(Lu { f, perm, sign })
    }

    pub fn det(&self) -> f64 {
        match self.n {
            1 => self.a[0],
            2 => self[(0, 0)] * self[(1, 1)] - self[(0, 1)] * self[(1, 0)],
            _ => self.lu().map_or(0.0, |lu| lu.det()),
        }
    }

    pub fn inverse(&self) -> Option<Self> {
        self.lu().map(|lu| lu.inverse())
    }

    pub fn cholesky(&self) -> Option<Self> {
        let n = self.n;
        let mut l = Self::zeros(n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d <= 0.0 || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Some(l)
    }

    /// Eigenvalues of the symmetric part, ascending. Closed form for n ≤ 2,
    /// cyclic Jacobi otherwise.
    pub fn sym_eigenvalues(&self) -> [f64; MAX_ORDER] {
        let s = self.symmetric_part();
        let mut out = [f64::INFINITY; MAX_ORDER];
        match s.n {
            1 => out[0] = s.a[0],
            2 => {
                let (a, b, d) = (s[(0, 0)], s[(0, 1)], s[(1, 1)]);
                let m = 0.5 * (a + d);
                let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
                out[0] = m - r;
                out[1] = m + r;
            }
            n => {
                let mut m = s;
                for _sweep in 0..64 {
                    let mut off = 0.0;
                    for p in 0..n {
                        for q in (p + 1)..n {
                            off += m[(p, q)] * m[(p, q)];
                        }
                    }
                    if off < 1e-30 {
                        break;
                    }
                    for p in 0..n {
                        for q in (p + 1)..n {
                            if m[(p, q)] == 0.0 {
                                continue;
                            }
                            let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                            let t = if theta == 0.0 { 1.0 } else { t };
                            let c = 1.0 / (t * t + 1.0).sqrt();
                            let sn = t * c;
                            for k in 0..n {
                                let mkp = m[(k, p)];
                                let mkq = m[(k, q)];
                                m[(k, p)] = c * mkp - sn * mkq;
                                m[(k, q)] = sn * mkp + c * mkq;
                            }
                            for k in 0..n {
                                let mpk = m[(p, k)];
                                let mqk = m[(q, k)];
                                m[(p, k)] = c * mpk - sn * mqk;
                                m[(q, k)] = sn * mpk + c * mqk;
                            }
                        }
                    }
                }
                for (i, o) in out.iter_mut().enumerate().take(n) {
                    *o = m[(i, i)];
                }
                out[..n].sort_by(|a, b| a.total_cmp(b));
            }
        }
        out
    }

    pub fn min_sym_eigenvalue(&self) -> f64 {
        self.sym_eigenvalues()[0]
    }

    pub fn max_sym_eigenvalue(&self) -> f64 {
        self.sym_eigenvalues()[self.n - 1]
    }

    /// Spectral condition number sqrt(λmax(MᵀM) / λmin(MᵀM)).
    pub fn condition_number(&self) -> f64 {
        let mtm = self.transpose().mul(self);
        let ev = mtm.sym_eigenvalues();
        let lo = ev[0];
        let hi = ev[self.n - 1];
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            (hi / lo).sqrt()
        }
    }
}

impl Index<(usize, usize)> for SmallMat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.a[i * MAX_ORDER + j]
    }
}

impl IndexMut<(usize, usize)> for SmallMat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.a[i * MAX_ORDER + j]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Lu {
    f: SmallMat,
    perm: [usize; MAX_ORDER],
    sign: f64,
}

impl Lu {
    pub fn det(&self) -> f64 {
        (0..self.f.n).fold(self.sign, |acc, i| acc * self.f[(i, i)])
    }

    /// ln|det| and the sign of det, computed from the pivots.
    pub fn log_abs_det(&self) -> (f64, f64) {
        let mut s = self.sign;
        let mut l = 0.0;
        for i in 0..self.f.n {
            let p = self.f[(i, i)];
            s *= p.signum();
            l += p.abs().ln();
        }
        (l, s)
    }

    /// Smallest |pivot| / largest |pivot|.
    pub fn pivot_ratio(&self) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for i in 0..self.f.n {
            let p = self.f[(i, i)].abs();
            lo = lo.min(p);
            hi = hi.max(p);
        }
        lo / hi
    }

    pub fn solve(&self, b: &[f64]) -> [f64; MAX_ORDER] {
        let n = self.f.n;
        let mut y = [0.0; MAX_ORDER];
        for i in 0..n {
            let mut s = b[self.perm[i]];
            for k in 0..i {
                s -= self.f[(i, k)] * y[k];
            }
            y[i] = s;
        }
        let mut x = [0.0; MAX_ORDER];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.f[(i, k)] * x[k];
            }
            x[i] = s / self.f[(i, i)];
        }
        x
    }

    pub fn inverse(&self) -> SmallMat {
        let n = self.f.n;
        let mut inv = SmallMat::zeros(n);
        for j in 0..n {
            let mut e = [0.0; MAX_ORDER];
            e[j] = 1.0;
            let col = self.solve(&e[..n]);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

/// Largest eigenvalue of the pencil (a, s) with `s` symmetric positive
/// definite: max over v of vᵀa v / vᵀs v for symmetric `a`.
pub fn generalized_max_eigenvalue(a: &SmallMat, s: &SmallMat) -> Option<f64> {
    let l = s.cholesky()?;
    let n = a.order();
    let linv = l.inverse()?;
    let m = linv.mul(&a.symmetric_part()).mul(&linv.transpose());
    Some(m.sym_eigenvalues()[n - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_det_and_inverse_4x4() {
        let m = SmallMat::from_row_slice(
            4,
            &[
                4.0, 1.0, 0.5, 0.0, //
                1.0, 3.0, 0.0, 0.2, //
                0.5, 0.0, 2.0, 0.1, //
                0.0, 0.2, 0.1, 1.0,
            ],
        );
        let inv = m.inverse().unwrap();
        let id = m.mul(&inv);
        assert!(id.sub(&SmallMat::identity(4)).max_abs() < 1e-14);
        // determinant by cofactor-free check: product of eigenvalues
        let ev = m.sym_eigenvalues();
        let prod: f64 = ev.iter().take(4).product();
        assert!((prod - m.det()).abs() < 1e-12 * m.det().abs());
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let m = SmallMat::from_row_slice(2, &[0.0, 2.0, 3.0, 0.0]);
        let lu = m.lu().unwrap();
        assert_eq!(lu.det(), -6.0);
        let x = lu.solve(&[4.0, 9.0]);
        assert_eq!(&x[..2], &[3.0, 2.0]);
    }

    #[test]
    fn generalized_eigen_of_identity_pencil() {
        let a = SmallMat::from_row_slice(2, &[2.0, 0.0, 0.0, 5.0]);
        let s = SmallMat::identity(2);
        assert!((generalized_max_eigenvalue(&a, &s).unwrap() - 5.0).abs() < 1e-14);
    }
}
