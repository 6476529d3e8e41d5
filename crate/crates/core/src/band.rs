//! Banded storage and factorizations for the assembled beam matrices.
//!
//! Hermite elements with the node-major DOF ordering couple at most the four
//! DOFs of one element, so every system matrix has half-bandwidth 3.

use faer::{c64, Mat};

use crate::error::{Error, Result};

/// Real symmetric band matrix, lower triangle stored row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBand {
    n: usize,
    bw: usize,
    /// `data[i * (bw + 1) + d] = A[i][i - d]`.
    data: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let d = r - c;
        if d > self.bw {
            0.0
        } else {
            self.data[r * (self.bw + 1) + d]
        }
    }

    /// Adds `v` to `A[i][j]` (and implicitly `A[j][i]`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let d = r - c;
        assert!(d <= self.bw, "entry ({i},{j}) outside the band");
        self.data[r * (self.bw + 1) + d] += v;
    }

    /// Row `i` as `(column, value)` pairs inside the band.
    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = i.saturating_sub(self.bw);
        let hi = (i + self.bw).min(self.n - 1);
        (lo..=hi).map(move |j| (j, self.get(i, j)))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n).map(|i| self.row(i).map(|(j, a)| a * x[j]).sum()).collect()
    }

    pub fn mul_cvec(&self, x: &[c64]) -> Vec<c64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).fold(c64::new(0.0, 0.0), |acc, (j, a)| acc + x[j] * a))
            .collect()
    }

    /// `x^T A y` for real vectors.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(self.mul_vec(y)).map(|(a, b)| a * b).sum()
    }

    /// `x^H A y` for complex vectors.
    pub fn sesquilinear(&self, x: &[c64], y: &[c64]) -> c64 {
        x.iter().zip(self.mul_cvec(y)).fold(c64::new(0.0, 0.0), |acc, (a, b)| acc + a.conj() * b)
    }

    pub fn to_dense(&self) -> Mat<f64> {
        Mat::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Nonzero entries of the full symmetric matrix in row-major order.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|i| self.row(i).filter(|(_, v)| *v != 0.0).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        (0..self.n).flat_map(|i| self.row(i)).map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }

    /// `sum_k c_k A_k` as a complex general band matrix.
    pub fn complex_combination(terms: &[(c64, &SymBand)]) -> ComplexBand {
        let first = terms.first().expect("at least one term").1;
        let (n, bw) = (first.n, first.bw);
        let mut out = ComplexBand::zeros(n, bw, bw);
        for &(coef, mat) in terms {
            assert_eq!((mat.n, mat.bw), (n, bw));
            for i in 0..n {
                for (j, v) in mat.row(i) {
                    out.add(i, j, coef * v);
                }
            }
        }
        out
    }

    /// `sum_k c_k A_k` with real coefficients.
    pub fn real_combination(terms: &[(f64, &SymBand)]) -> SymBand {
        let first = terms.first().expect("at least one term").1;
        let mut out = SymBand::zeros(first.n, first.bw);
        for &(coef, mat) in terms {
            assert_eq!((mat.n, mat.bw), (first.n, first.bw));
            for (o, v) in out.data.iter_mut().zip(&mat.data) {
                *o += coef * v;
            }
        }
        out
    }

    pub fn cholesky(&self) -> Result<BandCholesky> {
        BandCholesky::new(self)
    }
}

/// `A = L L^T` for a symmetric positive definite band matrix.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    /// Same layout as [`SymBand::data`], holding `L`.
    l: Vec<f64>,
}

impl BandCholesky {
    fn new(a: &SymBand) -> Result<Self> {
        let (n, bw) = (a.n, a.bw);
        let w = bw + 1;
        let mut l = a.data.clone();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = l[i * w + (i - j)];
                let kmin = lo.max(j.saturating_sub(bw));
                for k in kmin..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if j == i {
                    if !(s > 0.0) {
                        return Err(Error::FactorizationFailure(format!(
                            "matrix not positive definite at pivot {i} ({s:e})"
                        )));
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.l[i * (self.bw + 1) + (i - j)]
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        assert_eq!(x.len(), n);
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.at(i, k) * x[k];
            }
            x[i] = s / self.at(i, i);
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..(i + bw + 1).min(n) {
                s -= self.at(k, i) * x[k];
            }
            x[i] = s / self.at(i, i);
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves with a complex right-hand side (real and imaginary parts separately).
    pub fn solve_complex(&self, b: &[c64]) -> Vec<c64> {
        let re = self.solve(&b.iter().map(|z| z.re).collect::<Vec<_>>());
        let im = self.solve(&b.iter().map(|z| z.im).collect::<Vec<_>>());
        re.into_iter().zip(im).map(|(r, i)| c64::new(r, i)).collect()
    }

    /// `L^T x` (used for energy-norm similarity transforms).
    pub fn mul_lt(&self, x: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.n, self.bw);
        (0..n).map(|i| (i..(i + bw + 1).min(n)).map(|k| self.at(k, i) * x[k]).sum()).collect()
    }

    /// Dense `L`.
    pub fn factor_dense(&self) -> Mat<f64> {
        Mat::from_fn(self.n, self.n, |i, j| {
            if j <= i && i - j <= self.bw {
                self.at(i, j)
            } else {
                0.0
            }
        })
    }
}

/// Complex general band matrix with `kl` sub- and `ku` super-diagonals,
/// stored with `kl` extra rows of fill room for pivoting (LAPACK `gbtrf` layout).
#[derive(Debug, Clone)]
pub struct ComplexBand {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    ab: Vec<c64>,
}

impl ComplexBand {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        Self { n, kl, ku, ld, ab: vec![c64::new(0.0, 0.0); ld * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        // Row offset kl + ku + i - j in column j.
        j * self.ld + (self.kl + self.ku + i - j)
    }

    pub fn add(&mut self, i: usize, j: usize, v: c64) {
        assert!(i <= j + self.kl && j <= i + self.ku, "entry ({i},{j}) outside the band");
        let k = self.idx(i, j);
        self.ab[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> c64 {
        if i > j + self.kl || j > i + self.ku {
            c64::new(0.0, 0.0)
        } else {
            self.ab[self.idx(i, j)]
        }
    }

    pub fn mul_vec(&self, x: &[c64]) -> Vec<c64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).fold(c64::new(0.0, 0.0), |acc, j| acc + self.get(i, j) * x[j])
            })
            .collect()
    }

    /// Replaces `A` by `diag(d) A diag(d)`.
    pub fn scale_symmetric(&mut self, d: &[f64]) {
        for j in 0..self.n {
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl).min(self.n - 1);
            for i in lo..=hi {
                let k = self.idx(i, j);
                self.ab[k] *= d[i] * d[j];
            }
        }
    }

    fn norm_one(&self) -> f64 {
        (0..self.n)
            .map(|j| {
                let lo = j.saturating_sub(self.ku);
                let hi = (j + self.kl).min(self.n - 1);
                (lo..=hi).map(|i| self.get(i, j).norm()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn lu(self) -> Result<BandLu> {
        BandLu::new(self)
    }
}

/// `P A = L U` with partial pivoting on a band matrix.
#[derive(Debug, Clone)]
pub struct BandLu {
    a: ComplexBand,
    piv: Vec<usize>,
    norm_one: f64,
}

impl BandLu {
    fn new(mut a: ComplexBand) -> Result<Self> {
        let n = a.n;
        let (kl, kv) = (a.kl, a.kl + a.ku);
        let norm_one = a.norm_one();
        let mut piv = vec![0; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = a.ab[a.idx(k, k)].norm();
            for i in (k + 1)..=last {
                let v = a.ab[a.idx(i, k)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            piv[k] = p;
            if best == 0.0 {
                return Err(Error::FactorizationFailure(format!("zero pivot in column {k}")));
            }
            let jmax = (k + kv).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let (x, y) = (a.idx(k, j), a.idx(p, j));
                    a.ab.swap(x, y);
                }
            }
            let pivot = a.ab[a.idx(k, k)];
            for i in (k + 1)..=last {
                let ik = a.idx(i, k);
                let l = a.ab[ik] / pivot;
                a.ab[ik] = l;
                if l == c64::new(0.0, 0.0) {
                    continue;
                }
                for j in (k + 1)..=jmax {
                    let kj = a.ab[a.idx(k, j)];
                    let ij = a.idx(i, j);
                    a.ab[ij] -= l * kj;
                }
            }
        }
        Ok(Self { a, piv, norm_one })
    }

    pub fn n(&self) -> usize {
        self.a.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, x: &mut [c64]) {
        let a = &self.a;
        let n = a.n;
        let (kl, kv) = (a.kl, a.kl + a.ku);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            for i in (k + 1)..=(k + kl).min(n - 1) {
                x[i] -= a.ab[a.idx(i, k)] * xk;
            }
        }
        for k in (0..n).rev() {
            let xk = x[k] / a.ab[a.idx(k, k)];
            x[k] = xk;
            for i in k.saturating_sub(kv)..k {
                x[i] -= a.ab[a.idx(i, k)] * xk;
            }
        }
    }

    /// Solves `A^H x = b` in place.
    pub fn solve_adjoint_in_place(&self, x: &mut [c64]) {
        let a = &self.a;
        let n = a.n;
        let (kl, kv) = (a.kl, a.kl + a.ku);
        for k in 0..n {
            let mut s = x[k];
            for i in k.saturating_sub(kv)..k {
                s -= a.ab[a.idx(i, k)].conj() * x[i];
            }
            x[k] = s / a.ab[a.idx(k, k)].conj();
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for i in (k + 1)..=(k + kl).min(n - 1) {
                s -= a.ab[a.idx(i, k)].conj() * x[i];
            }
            x[k] = s;
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
        }
    }

    pub fn solve(&self, b: &[c64]) -> Vec<c64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Estimate of the 1-norm condition number (Hager's method with Higham's
    /// alternating-sign safeguard).
    pub fn condition_estimate(&self) -> f64 {
        self.norm_one * self.inverse_norm_one_estimate()
    }

    fn inverse_norm_one_estimate(&self) -> f64 {
        let n = self.n();
        let zero = c64::new(0.0, 0.0);
        let mut x = vec![c64::new(1.0 / n as f64, 0.0); n];
        let mut est = 0.0;
        let mut last_j = usize::MAX;
        for _ in 0..5 {
            self.solve_in_place(&mut x);
            let norm: f64 = x.iter().map(|z| z.norm()).sum();
            if norm <= est {
                break;
            }
            est = norm;
            let mut z: Vec<c64> = x
                .iter()
                .map(|v| if v.norm() > 0.0 { v / v.norm() } else { c64::new(1.0, 0.0) })
                .collect();
            self.solve_adjoint_in_place(&mut z);
            let (j, zmax) = z
                .iter()
                .enumerate()
                .map(|(j, v)| (j, v.norm()))
                .fold((0, -1.0), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| (a.conj() * b).re).sum();
            if zmax <= ztx || j == last_j {
                break;
            }
            last_j = j;
            x = vec![zero; n];
            x[j] = c64::new(1.0, 0.0);
        }
        // Alternating-sign probe catches cancellation that fools the main iteration.
        let mut alt: Vec<c64> = (0..n)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                c64::new(s * (1.0 + i as f64 / (n as f64 - 1.0).max(1.0)), 0.0)
            })
            .collect();
        self.solve_in_place(&mut alt);
        let alt_est = 2.0 * alt.iter().map(|z| z.norm()).sum::<f64>() / (3.0 * n as f64);
        est.max(alt_est)
    }
}
