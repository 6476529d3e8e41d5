//! Resolvent `(i lambda - A_h)^{-1}` along the imaginary axis, measured in
//! the energy norm `||U||_G^2 = u^H K u + v^H M v`.
//!
//! Every application reduces to one solve with the quadratic pencil
//! `P(s) = s^2 M + s D + K` at `s = i lambda`, factored once per frequency.

use std::str::FromStr;

use faer::{c64, Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::band::{BandCholesky, BandLu, SymBand};
use crate::config::BeamConfig;
use crate::error::{Error, Result};
use crate::fem::{StateVector, SystemMatrices};
use crate::format::csv_table;
use crate::spectrum::linearize;

pub const SCAN_CSV_HEADER: &str = "lambda,norm,scaled_norm,mesh_n,converged";

/// Condition estimate of the scaled pencil above which a frequency is
/// treated as lying on the discrete spectrum.
pub const NEAR_SINGULAR_CONDITION: f64 = 1e14;

/// Bound on the normwise backward error of a resolvent solve, see
/// [`backward_error`].
pub const SUBSTITUTION_TOL: f64 = 1e-10;

/// Relative norm change under mesh doubling tolerated in a scan.
pub const MESH_CONVERGENCE_TOL: f64 = 0.05;

/// Companion dimension up to which [`resolvent_norm`] uses a dense SVD.
pub const DENSE_NORM_LIMIT: usize = 400;

/// The pencil `P(i lambda)`, symmetrically scaled and LU-factored.
pub struct PencilFactor<'a> {
    pub matrices: &'a SystemMatrices,
    pub lambda: f64,
    pub s: c64,
    scale: Vec<f64>,
    lu: BandLu,
}

impl<'a> PencilFactor<'a> {
    pub fn new(matrices: &'a SystemMatrices, lambda: f64) -> Result<Self> {
        let s = c64::new(0.0, lambda);
        let one = c64::new(1.0, 0.0);
        let mut pencil = SymBand::complex_combination(&[
            (s * s, &matrices.mass),
            (s, &matrices.damping),
            (one, &matrices.stiffness),
        ]);
        let scale: Vec<f64> = (0..matrices.n())
            .map(|i| {
                let d = matrices.stiffness.get(i, i) + lambda * lambda * matrices.mass.get(i, i);
                1.0 / d.sqrt()
            })
            .collect();
        pencil.scale_symmetric(&scale);
        let lu = pencil.lu().map_err(|_| Error::NearSingular { lambda, condition: f64::INFINITY })?;
        let condition = lu.condition_estimate();
        if !(condition <= NEAR_SINGULAR_CONDITION) {
            return Err(Error::NearSingular { lambda, condition });
        }
        Ok(Self { matrices, lambda, s, scale, lu })
    }

    /// `P(s)^{-1} b`.
    pub fn solve(&self, b: &[c64]) -> Vec<c64> {
        let mut x: Vec<c64> = b.iter().zip(&self.scale).map(|(v, d)| v * d).collect();
        self.lu.solve_in_place(&mut x);
        x.iter_mut().zip(&self.scale).for_each(|(v, d)| *v *= d);
        x
    }

    /// `P(s)^{-H} b`.
    pub fn solve_adjoint(&self, b: &[c64]) -> Vec<c64> {
        let mut x: Vec<c64> = b.iter().zip(&self.scale).map(|(v, d)| v * d).collect();
        self.lu.solve_adjoint_in_place(&mut x);
        x.iter_mut().zip(&self.scale).for_each(|(v, d)| *v *= d);
        x
    }

    /// Right-hand side `M f2 + (s M + D) f1` of the reduced equation.
    fn reduced_rhs(&self, f: &StateVector<c64>) -> Vec<c64> {
        let m = self.matrices;
        let mf2 = m.mass.mul_cvec(&f.v);
        let mf1 = m.mass.mul_cvec(&f.u);
        let df1 = m.damping.mul_cvec(&f.u);
        (0..m.n()).map(|i| mf2[i] + self.s * mf1[i] + df1[i]).collect()
    }

    /// `R F` with a plain pencil solve.
    pub fn apply(&self, f: &StateVector<c64>) -> StateVector<c64> {
        let u = self.solve(&self.reduced_rhs(f));
        let v = u.iter().zip(&f.u).map(|(u, f1)| self.s * u - f1).collect();
        StateVector { u, v }
    }

    /// `R^H Y`, the Euclidean adjoint.
    pub fn apply_adjoint(&self, y: &StateVector<c64>) -> StateVector<c64> {
        let m = self.matrices;
        let sc = self.s.conj();
        let rhs: Vec<c64> = y.u.iter().zip(&y.v).map(|(a, b)| a + sc * b).collect();
        let z = self.solve_adjoint(&rhs);
        let mz = m.mass.mul_cvec(&z);
        let dz = m.damping.mul_cvec(&z);
        let u = (0..m.n()).map(|i| sc * mz[i] + dz[i] - y.v[i]).collect();
        StateVector { u, v: mz }
    }

    /// `R F` with iterative refinement of the pencil solve against a
    /// double-word residual.
    pub fn apply_refined(&self, f: &StateVector<c64>) -> StateVector<c64> {
        let b = self.reduced_rhs(f);
        let mut u = self.solve(&b);
        let norm = |x: &[c64]| x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for _ in 0..4 {
            let r = self.matrices.pencil_residual(self.s, &u, &b);
            let du = self.solve(&r);
            u.iter_mut().zip(&du).for_each(|(a, d)| *a += d);
            if norm(&du) <= 1e-15 * norm(&u) {
                break;
            }
        }
        let v = u.iter().zip(&f.u).map(|(u, f1)| self.s * u - f1).collect();
        StateVector { u, v }
    }
}

/// `||(i lambda - A_h) U - F||_G / ||F||_G`, with the second component
/// measured through its `M`-weighted form `M r_2 = P(s) u - b`.
pub fn substitution_residual(
    matrices: &SystemMatrices,
    lambda: f64,
    f: &StateVector<c64>,
    u: &StateVector<c64>,
) -> Result<f64> {
    let s = c64::new(0.0, lambda);
    let r1: Vec<c64> = (0..matrices.n()).map(|i| s * u.u[i] - u.v[i] - f.u[i]).collect();
    let mf2 = matrices.mass.mul_cvec(&f.v);
    let mf1 = matrices.mass.mul_cvec(&f.u);
    let df1 = matrices.damping.mul_cvec(&f.u);
    let b: Vec<c64> = (0..matrices.n()).map(|i| mf2[i] + s * mf1[i] + df1[i]).collect();
    let g = matrices.pencil_residual(s, &u.u, &b);
    let mg = matrices.mass.cholesky()?.solve_complex(&g);
    let r2_sq: f64 = g.iter().zip(&mg).map(|(a, b)| (a.conj() * b).re).sum();
    let r1_sq = matrices.bending_energy(&r1);
    let f_norm = matrices.state_norm(f);
    if f_norm == 0.0 {
        return Ok((r1_sq + r2_sq).max(0.0).sqrt());
    }
    Ok((r1_sq + r2_sq).max(0.0).sqrt() / f_norm)
}

/// `||A_h||_G` from 30 steps of power iteration on `A^# A`, where the
/// `G`-adjoint is `A^# (y_u, y_v) = (-y_v, M^{-1} (K y_u - D y_v))`.
pub fn operator_norm(matrices: &SystemMatrices) -> Result<f64> {
    let op = linearize(matrices)?;
    let mass = cholesky(&matrices.mass)?;
    let mut x = random_state(&mut ChaCha8Rng::seed_from_u64(0x0a0a), matrices.n());
    let mut estimate = 0.0;
    for _ in 0..30 {
        let norm = matrices.energy_norm(&x);
        if norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        x = x.scaled(c64::new(1.0 / norm, 0.0));
        let y = op.apply(&x);
        estimate = matrices.energy_norm(&y);
        let ku = matrices.stiffness.mul_cvec(&y.u);
        let dv = matrices.damping.mul_cvec(&y.v);
        let rhs: Vec<c64> = ku.iter().zip(&dv).map(|(a, b)| a - b).collect();
        x = StateVector { u: y.v.iter().map(|z| -z).collect(), v: mass.solve_complex(&rhs) };
    }
    Ok(estimate)
}

/// Normwise backward error `||(i lambda - A_h) U - F||_G / (||F||_G +
/// (|lambda| + ||A_h||_G) ||U||_G)` of a computed solve.
///
/// Relative to `||F||_G` alone the residual of any `U` stored in `f64` is
/// bounded below by about `eps ||A_h||_G ||U||_G / ||F||_G`, which exceeds
/// `1e-10` for smooth loads on fine meshes.
pub fn backward_error(
    matrices: &SystemMatrices,
    lambda: f64,
    f: &StateVector<c64>,
    u: &StateVector<c64>,
) -> Result<f64> {
    let f_norm = matrices.state_norm(f);
    let residual = substitution_residual(matrices, lambda, f, u)?;
    let absolute = if f_norm == 0.0 { residual } else { residual * f_norm };
    let scale = f_norm + (lambda.abs() + operator_norm(matrices)?) * matrices.state_norm(u);
    Ok(if scale == 0.0 { absolute } else { absolute / scale })
}

/// Solves `(i lambda - A_h) U = F`.
pub fn resolvent_solve(
    matrices: &SystemMatrices,
    lambda: f64,
    f: &StateVector<c64>,
) -> Result<StateVector<c64>> {
    if f.len() != matrices.n() {
        return Err(Error::DimensionMismatch { expected: matrices.n(), got: f.len() });
    }
    let factor = PencilFactor::new(matrices, lambda)?;
    let u = factor.apply_refined(f);
    let res = backward_error(matrices, lambda, f, &u)?;
    if !(res <= SUBSTITUTION_TOL) {
        return Err(Error::NoConvergence { iterations: 4, last: c64::new(lambda, res) });
    }
    Ok(u)
}

/// `||(i lambda - A_h)^{-1}||` in the energy norm.
///
/// Dense SVD of `W R W^{-1}` (`G = W^T W`) for small systems, Lanczos on
/// `R^# R` with the `G`-adjoint `R^# = G^{-1} R^H G` otherwise.
pub fn resolvent_norm(matrices: &SystemMatrices, lambda: f64) -> Result<f64> {
    if 2 * matrices.n() <= DENSE_NORM_LIMIT {
        resolvent_norm_dense(matrices, lambda)
    } else {
        resolvent_norm_lanczos(matrices, lambda)
    }
}

fn cholesky(m: &SymBand) -> Result<BandCholesky> {
    m.cholesky().map_err(|_| Error::CholeskyFailure)
}

pub fn resolvent_norm_dense(matrices: &SystemMatrices, lambda: f64) -> Result<f64> {
    let n = matrices.n();
    // Fails early (with the right error) on an exactly singular pencil.
    PencilFactor::new(matrices, lambda)?;
    let a = linearize(matrices)?.to_dense();
    let s = c64::new(0.0, lambda);
    let shifted = Mat::from_fn(2 * n, 2 * n, |i, j| {
        let d = if i == j { s } else { c64::new(0.0, 0.0) };
        d - c64::new(a[(i, j)], 0.0)
    });
    let r = faer::linalg::solvers::DenseSolveCore::inverse(&shifted.partial_piv_lu());
    let lk = cholesky(&matrices.stiffness)?.factor_dense();
    let lm = cholesky(&matrices.mass)?.factor_dense();
    // W = diag(L_K^T, L_M^T), so ||x||_G = ||W x||.
    let w = Mat::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, true) => lk[(j, i)],
        (false, false) => lm[(j - n, i - n)],
        _ => 0.0,
    });
    let w_c = Mat::from_fn(2 * n, 2 * n, |i, j| c64::new(w[(i, j)], 0.0));
    let w_inv = faer::linalg::solvers::DenseSolveCore::inverse(&w_c.partial_piv_lu());
    let b = &w_c * &r * &w_inv;
    let sv = b.singular_values().map_err(|_| Error::QrNoConvergence)?;
    Ok(sv.iter().cloned().fold(0.0, f64::max))
}

/// Largest Lanczos dimension before giving up.
const LANCZOS_MAX_STEPS: usize = 400;

/// `G x` for the energy inner product.
fn gram(matrices: &SystemMatrices, x: &StateVector<c64>) -> StateVector<c64> {
    StateVector { u: matrices.stiffness.mul_cvec(&x.u), v: matrices.mass.mul_cvec(&x.v) }
}

/// `<x, y>_G` given `gx = G x`.
fn gram_dot(gx: &StateVector<c64>, y: &StateVector<c64>) -> c64 {
    let dot = |a: &[c64], b: &[c64]| a.iter().zip(b).map(|(p, q)| p.conj() * q).sum::<c64>();
    dot(&gx.u, &y.u) + dot(&gx.v, &y.v)
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> StateVector<c64> {
    let mut draw = || c64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    StateVector { u: (0..n).map(|_| draw()).collect(), v: (0..n).map(|_| draw()).collect() }
}

/// Orthogonalizes `w` against `basis` (twice, classical Gram–Schmidt) in the
/// `G` inner product and returns the accumulated coefficients.
fn orthogonalize(
    basis: &[StateVector<c64>],
    gbasis: &[StateVector<c64>],
    w: &mut StateVector<c64>,
) -> Vec<c64> {
    let mut coeffs = vec![c64::new(0.0, 0.0); basis.len()];
    for _ in 0..2 {
        let c: Vec<c64> = gbasis.iter().map(|g| gram_dot(g, w)).collect();
        for ((b, ci), acc) in basis.iter().zip(&c).zip(coeffs.iter_mut()) {
            w.axpy(-ci, b);
            *acc += ci;
        }
    }
    coeffs
}

pub fn resolvent_norm_lanczos(matrices: &SystemMatrices, lambda: f64) -> Result<f64> {
    let n = matrices.n();
    let factor = PencilFactor::new(matrices, lambda)?;
    let chol_k = cholesky(&matrices.stiffness)?;
    let chol_m = cholesky(&matrices.mass)?;
    let op = |x: &StateVector<c64>| -> StateVector<c64> {
        let y = factor.apply_adjoint(&gram(matrices, &factor.apply(x)));
        StateVector { u: chol_k.solve_complex(&y.u), v: chol_m.solve_complex(&y.v) }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ lambda.to_bits());
    let mut q = random_state(&mut rng, n);
    let mut gq = gram(matrices, &q);
    let q_norm = gram_dot(&gq, &q).re.sqrt();
    q = q.scaled(c64::new(1.0 / q_norm, 0.0));
    gq = gq.scaled(c64::new(1.0 / q_norm, 0.0));

    let steps = LANCZOS_MAX_STEPS.min(2 * n);
    let (mut basis, mut gbasis) = (Vec::new(), Vec::new());
    let (mut alphas, mut betas) = (Vec::new(), Vec::<f64>::new());
    let mut estimate = 0.0;
    for j in 0..steps {
        let mut w = op(&q);
        let alpha = gram_dot(&gq, &w).re;
        w.axpy(c64::new(-alpha, 0.0), &q);
        if let Some(prev) = basis.last() {
            w.axpy(c64::new(-betas[j - 1], 0.0), prev);
        }
        basis.push(q);
        gbasis.push(gq);
        orthogonalize(&basis, &gbasis, &mut w);
        alphas.push(alpha);
        let gw = gram(matrices, &w);
        let beta = gram_dot(&gw, &w).re.max(0.0).sqrt();
        let m = alphas.len();
        if m % 4 == 0 || beta == 0.0 || m == steps {
            let t = Mat::from_fn(m, m, |a, b| {
                if a == b {
                    alphas[a]
                } else if a == b + 1 {
                    betas[b]
                } else if b == a + 1 {
                    betas[a]
                } else {
                    0.0
                }
            });
            let evd = t.self_adjoint_eigen(Side::Lower).map_err(|_| Error::QrNoConvergence)?;
            let vals = evd.S().column_vector();
            let top = (0..m).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
            estimate = vals[top];
            let bound = beta * evd.U()[(m - 1, top)].abs();
            if bound <= 1e-11 * estimate || beta <= 1e-300 {
                return Ok(estimate.max(0.0).sqrt());
            }
        }
        if beta == 0.0 {
            break;
        }
        betas.push(beta);
        q = w.scaled(c64::new(1.0 / beta, 0.0));
        gq = gw.scaled(c64::new(1.0 / beta, 0.0));
    }
    Err(Error::NoConvergence { iterations: steps, last: c64::new(estimate.max(0.0).sqrt(), 0.0) })
}

/// Largest Krylov dimension of [`axis_modes`].
const ARNOLDI_MAX_DIM: usize = 900;

/// Rough count of the near-axis eigenvalues with imaginary part in
/// `[lo, hi]`, from the undamped wavenumber `(rho w^2 / alpha)^{1/4}`.
fn expected_mode_count(config: &BeamConfig, lo: f64, hi: f64) -> usize {
    let density: f64 = config
        .segments()
        .iter()
        .map(|seg| seg.len() * (seg.rho / seg.alpha).powf(0.25))
        .sum::<f64>()
        / std::f64::consts::PI;
    (density * (hi.max(0.0).sqrt() - lo.max(0.0).sqrt())).ceil() as usize + 2
}

/// Eigenvalues of `A_h` within `radius` of `i sigma`, by shift-invert
/// Arnoldi in the energy inner product, polished on the pencil.
///
/// The Krylov space grows until every Ritz value inside the disc has a
/// relative residual below `1e-8`.
pub fn modes_near(matrices: &SystemMatrices, sigma: f64, radius: f64) -> Result<Vec<c64>> {
    if !(radius > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("bad disc i*{sigma} radius {radius}")));
    }
    let n = matrices.n();
    // A shift sitting on an eigenvalue is nudged along the axis.
    let (factor, sigma) = (0..8)
        .map(|k| sigma + 1e-3 * radius * k as f64)
        .find_map(|s| PencilFactor::new(matrices, s).ok().map(|f| (f, s)))
        .ok_or(Error::NearSingular { lambda: sigma, condition: f64::INFINITY })?;
    let shift = c64::new(0.0, sigma);
    let cap = ARNOLDI_MAX_DIM.min(2 * n);
    let expected = expected_mode_count(&matrices.config, sigma - radius, sigma + radius);
    let mut target = (3 * expected + 30).min(cap);

    let mut rng = ChaCha8Rng::seed_from_u64(0xa4_0d1 ^ sigma.to_bits());
    let mut q = random_state(&mut rng, n);
    let norm = gram_dot(&gram(matrices, &q), &q).re.sqrt();
    q = q.scaled(c64::new(1.0 / norm, 0.0));
    let (mut basis, mut gbasis): (Vec<StateVector<c64>>, Vec<StateVector<c64>>) = (vec![], vec![]);
    // Column j holds the entries h[0..=j+1][j].
    let mut h: Vec<Vec<c64>> = Vec::new();
    let mut invariant = false;
    loop {
        while basis.len() < target {
            let mut w = factor.apply(&q);
            gbasis.push(gram(matrices, &q));
            basis.push(q.clone());
            let mut col = orthogonalize(&basis, &gbasis, &mut w);
            let beta = gram_dot(&gram(matrices, &w), &w).re.max(0.0).sqrt();
            col.push(c64::new(beta, 0.0));
            h.push(col);
            if beta <= 1e-14 * h.last().map_or(1.0, |c| c.iter().map(|z| z.norm()).fold(0.0, f64::max)) {
                // Invariant subspace: the Ritz values are exact.
                invariant = true;
                break;
            }
            q = w.scaled(c64::new(1.0 / beta, 0.0));
        }
        let m = basis.len();
        let hm = Mat::from_fn(m, m, |i, j| if i <= j + 1 { h[j][i] } else { c64::new(0.0, 0.0) });
        let evd = hm.eigen().map_err(|_| Error::QrNoConvergence)?;
        let theta = evd.S().column_vector();
        let y = evd.U();
        let tail = h[m - 1][m];
        let mut found = Vec::new();
        let mut unconverged = false;
        for k in 0..m {
            let t = theta[k];
            if t.norm() == 0.0 {
                continue;
            }
            let mu = shift - t.inv();
            if (mu - shift).norm() > radius {
                continue;
            }
            let y_norm = (0..m).map(|i| y[(i, k)].norm_sqr()).sum::<f64>().sqrt();
            let res = tail.norm() * y[(m - 1, k)].norm() / y_norm;
            if res > 1e-8 * t.norm() {
                unconverged = true;
                continue;
            }
            let mut u = vec![c64::new(0.0, 0.0); n];
            for (i, b) in basis.iter().enumerate() {
                let c = y[(i, k)];
                u.iter_mut().zip(&b.u).for_each(|(a, x)| *a += c * x);
            }
            let un = u.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            u.iter_mut().for_each(|z| *z /= un);
            let mu = crate::spectrum::refine_pair(matrices, mu, &u, 3).map_or(mu, |(l, _)| l);
            found.push(mu);
        }
        if !unconverged || invariant || m >= cap {
            if unconverged && !invariant {
                return Err(Error::NoConvergence { iterations: m, last: shift });
            }
            found.sort_by(|a, b| a.im.total_cmp(&b.im));
            return Ok(found);
        }
        target = (target + target / 2).min(cap);
    }
}

/// Maximum of `||R(i w)||` over `w` in `[lo, hi]`, with the frequency where
/// it is attained.
///
/// The peaks sit at the imaginary parts of nearby eigenvalues and have width
/// about `|Re mu|`; each candidate peak is polished by one parabolic step on
/// `1 / ||R||^2`, which is quadratic in `w` near a simple eigenvalue.
pub fn band_maximum(matrices: &SystemMatrices, lo: f64, hi: f64, centre: f64) -> Result<(f64, f64)> {
    let norm = |w: f64| resolvent_norm(matrices, w);
    let mut best = (f64::MIN, centre);
    let consider = |w: f64, v: f64, best: &mut (f64, f64)| {
        if v > best.0 {
            *best = (v, w);
        }
    };
    for w in [lo, centre, hi] {
        consider(w, norm(w)?, &mut best);
    }
    let sigma = 0.5 * (lo + hi);
    let modes = modes_near(matrices, sigma, hi - lo)?;
    let mut peaks: Vec<(c64, f64)> = Vec::new();
    for mu in modes.into_iter().filter(|m| m.im > lo && m.im < hi) {
        let v = norm(mu.im)?;
        consider(mu.im, v, &mut best);
        peaks.push((mu, v));
    }
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    for (mu, v0) in peaks {
        if v0 < 0.5 * best.0 {
            break;
        }
        let w0 = mu.im;
        let r = mu.re.abs().max(1e-9 * w0);
        let wm = (w0 - 0.5 * r).max(lo);
        let wp = (w0 + 0.5 * r).min(hi);
        let (vm, vp) = (norm(wm)?, norm(wp)?);
        consider(wm, vm, &mut best);
        consider(wp, vp, &mut best);
        // Vertex of the parabola through (w, 1/v^2).
        let g = |v: f64| 1.0 / (v * v);
        let (g0, gm, gp) = (g(v0), g(vm), g(vp));
        let d1 = (gp - g0) / (wp - w0);
        let d0 = (g0 - gm) / (w0 - wm);
        let curv = (d1 - d0) / (wp - wm);
        if curv > 0.0 {
            let ws = 0.5 * (w0 + wp) - d1 / (2.0 * curv);
            if ws > lo && ws < hi && (ws - w0).abs() <= r {
                consider(ws, norm(ws)?, &mut best);
            }
        }
    }
    Ok((best.0, best.1))
}

/// How the mesh is chosen for a frequency `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum MeshPolicy {
    Fixed(usize),
    /// The shortest bending wavelength `2 pi / |k|` over the segments is
    /// covered by at least this many elements.
    Wavelength { elements_per_wavelength: f64, min_per_segment: usize },
}

impl MeshPolicy {
    /// Eight elements per shortest wavelength.
    pub const SCAN: MeshPolicy =
        MeshPolicy::Wavelength { elements_per_wavelength: 8.0, min_per_segment: 8 };

    pub fn n_per_segment(&self, config: &BeamConfig, lambda: f64) -> usize {
        match *self {
            MeshPolicy::Fixed(n) => n,
            MeshPolicy::Wavelength { elements_per_wavelength, min_per_segment } => {
                let s = c64::new(0.0, lambda);
                config
                    .segments()
                    .iter()
                    .map(|seg| {
                        let a = seg.moment_coefficient(s);
                        let k = (lambda * lambda * seg.rho / a.norm()).powf(0.25);
                        let wavelength = std::f64::consts::TAU / k;
                        (elements_per_wavelength * seg.len() / wavelength).ceil() as usize
                    })
                    .fold(min_per_segment, usize::max)
            }
        }
    }

    pub fn tag(&self) -> String {
        match self {
            MeshPolicy::Fixed(n) => format!("fixed:{n}"),
            MeshPolicy::Wavelength { elements_per_wavelength, .. } => {
                format!("wavelength:{elements_per_wavelength}")
            }
        }
    }
}

impl FromStr for MeshPolicy {
    type Err = Error;

    /// `fixed:N` or `wavelength:E`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("mesh policy '{s}' is not fixed:N or wavelength:E"));
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "fixed" => match value.parse::<usize>() {
                Ok(n) if n >= 1 => Ok(MeshPolicy::Fixed(n)),
                _ => Err(bad()),
            },
            "wavelength" => match value.parse::<f64>() {
                Ok(e) if e > 0.0 && e.is_finite() => Ok(MeshPolicy::Wavelength {
                    elements_per_wavelength: e,
                    min_per_segment: 8,
                }),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

/// What a scan entry measures at grid frequency `lambda_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sampling {
    /// `||R(i lambda_i)||` itself.
    Point,
    /// The maximum of `||R(i w)||` over the grid cell
    /// `[lambda_i 10^{-1/(2 ppd)}, lambda_i 10^{1/(2 ppd)}]`.
    ///
    /// Point values swing by an order of magnitude between resonance peaks
    /// and the valleys between them, so which one a grid point lands on is
    /// luck; the cell maximum is what a bound on `sup ||R||` constrains.
    Band,
}

impl FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point" => Ok(Sampling::Point),
            "band" => Ok(Sampling::Band),
            _ => Err(Error::InvalidArgument(format!("sampling '{s}' is not point or band"))),
        }
    }
}

/// Resolvent norms on a log-spaced frequency grid.
#[derive(Debug, Clone, Serialize)]
pub struct ResolventScan {
    pub lambdas: Vec<f64>,
    pub norms: Vec<f64>,
    /// `lambda^{1/4} * norm`.
    pub scaled: Vec<f64>,
    /// Frequency at which each norm was attained (the grid point itself for
    /// point sampling).
    pub argmax: Vec<f64>,
    /// Free DOF count of the mesh each norm was computed on.
    pub mesh_n: Vec<usize>,
    /// Norm on the doubled mesh within 5 %.
    pub converged: Vec<bool>,
    /// Least-squares slope of `log norm` against `log lambda` over the top
    /// two converged decades.
    pub fitted_slope: Option<f64>,
    pub mesh_tag: String,
    pub sampling: Sampling,
    /// Grid frequencies skipped as near-singular.
    pub gaps: Vec<f64>,
}

impl ResolventScan {
    pub fn to_csv(&self) -> String {
        csv_table(
            SCAN_CSV_HEADER,
            (0..self.lambdas.len()).map(|i| {
                vec![
                    self.lambdas[i],
                    self.norms[i],
                    self.scaled[i],
                    self.mesh_n[i] as f64,
                    if self.converged[i] { 1.0 } else { 0.0 },
                ]
            }),
        )
    }

    fn converged_points(&self) -> Vec<(f64, f64)> {
        (0..self.lambdas.len())
            .filter(|&i| self.converged[i])
            .map(|i| (self.lambdas[i], self.norms[i]))
            .collect()
    }
}

/// Log-spaced grid from `lambda_min` to `lambda_max` inclusive.
pub fn log_grid(lambda_min: f64, lambda_max: f64, points_per_decade: usize) -> Vec<f64> {
    let decades = (lambda_max / lambda_min).log10();
    let count = (decades * points_per_decade as f64 + 1e-9).floor() as usize;
    (0..=count)
        .map(|i| lambda_min * 10f64.powf(i as f64 / points_per_decade as f64))
        .collect()
}

/// One grid entry on a given mesh: `(norm, argmax)`.
fn measure(
    matrices: &SystemMatrices,
    lambda: f64,
    cell: (f64, f64),
    sampling: Sampling,
) -> Result<(f64, f64)> {
    match sampling {
        Sampling::Point => Ok((resolvent_norm(matrices, lambda)?, lambda)),
        Sampling::Band => band_maximum(matrices, cell.0, cell.1, lambda),
    }
}

pub fn scan(
    config: &BeamConfig,
    lambda_min: f64,
    lambda_max: f64,
    points_per_decade: usize,
    policy: MeshPolicy,
    sampling: Sampling,
) -> Result<ResolventScan> {
    if !(lambda_min >= 1.0 && lambda_max > lambda_min) {
        return Err(Error::InvalidArgument(format!(
            "scan range [{lambda_min}, {lambda_max}] must satisfy 1 <= min < max"
        )));
    }
    if points_per_decade < 4 {
        return Err(Error::InvalidArgument("points_per_decade must be at least 4".into()));
    }
    let grid = log_grid(lambda_min, lambda_max, points_per_decade);
    let half = 10f64.powf(0.5 / points_per_decade as f64);
    type Entry = Option<(f64, f64, usize, bool)>;
    let results: Vec<Result<Entry>> = grid
        .par_iter()
        .map(|&lambda| {
            let cell = match sampling {
                Sampling::Point => (lambda, lambda),
                Sampling::Band => (lambda / half, lambda * half),
            };
            let nps = policy.n_per_segment(config, cell.1);
            let coarse = SystemMatrices::build(config, nps)?;
            let (norm, argmax) = match measure(&coarse, lambda, cell, sampling) {
                Ok(v) => v,
                Err(Error::NearSingular { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let fine = SystemMatrices::build(config, 2 * nps)?;
            let converged = match measure(&fine, lambda, cell, sampling) {
                Ok((v, _)) => (norm - v).abs() <= MESH_CONVERGENCE_TOL * v,
                Err(Error::NearSingular { .. }) => false,
                Err(e) => return Err(e),
            };
            Ok(Some((norm, argmax, coarse.n(), converged)))
        })
        .collect();

    let mut out = ResolventScan {
        lambdas: Vec::new(),
        norms: Vec::new(),
        scaled: Vec::new(),
        argmax: Vec::new(),
        mesh_n: Vec::new(),
        converged: Vec::new(),
        fitted_slope: None,
        mesh_tag: policy.tag(),
        sampling,
        gaps: Vec::new(),
    };
    for (lambda, r) in grid.iter().zip(results) {
        match r? {
            Some((norm, argmax, n, converged)) => {
                out.lambdas.push(*lambda);
                out.norms.push(norm);
                out.scaled.push(lambda.powf(0.25) * norm);
                out.argmax.push(argmax);
                out.mesh_n.push(n);
                out.converged.push(converged);
            }
            None => out.gaps.push(*lambda),
        }
    }
    out.fitted_slope = top_two_decades(&out.converged_points())
        .map(|pts| log_log_slope(&pts, 0.0))
        .filter(|s| s.is_finite());
    Ok(out)
}

/// Points with `lambda` within two decades of the largest one.
fn top_two_decades(points: &[(f64, f64)]) -> Option<Vec<(f64, f64)>> {
    let last = points.last()?.0;
    let pts: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.0 >= last / 100.0 - 1e-9 * last).collect();
    (pts.len() >= 2).then_some(pts)
}

/// Least-squares slope of `log(lambda^mu * y)` against `log lambda`.
fn log_log_slope(points: &[(f64, f64)], mu: f64) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln() + mu * p.0.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Verdicts on the decay of the resolvent along the imaginary axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Classification {
    /// `lambda^{1/4} ||R||` stays bounded: its maximum is reached in the
    /// first converged decade and exceeds the last value by at most 1.5.
    pub gevrey4_consistent: bool,
    /// The fitted trend of `lambda ||R||` grows by at least 10 over the top
    /// two decades.
    pub analytic_excluded: bool,
    /// The fitted trend of `lambda^{1/2} ||R||` grows by at least 3 over the
    /// top two decades.
    pub gevrey2_excluded: bool,
    /// `C = max lambda^{1/4} ||R||` over converged points.
    pub bound_constant: f64,
    pub fitted_slope: f64,
    /// Growth factors of `lambda^{1/2} ||R||` and `lambda ||R||`.
    pub growth_half: f64,
    pub growth_one: f64,
}

pub fn classify(scan: &ResolventScan) -> Result<Classification> {
    let pts = scan.converged_points();
    let decades = match (pts.first(), pts.last()) {
        (Some(a), Some(b)) => (b.0 / a.0).log10(),
        _ => 0.0,
    };
    if decades < 2.0 - 1e-9 {
        return Err(Error::InsufficientConvergedRange { decades });
    }
    let scaled: Vec<f64> = pts.iter().map(|(l, n)| l.powf(0.25) * n).collect();
    let (imax, cmax) = scaled
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let first_decade_end = pts[0].0 * 10.0 * (1.0 + 1e-9);
    let gevrey4_consistent =
        pts[imax].0 <= first_decade_end && cmax <= 1.5 * scaled[scaled.len() - 1];

    // Growth is read off the least-squares trend rather than two end
    // points, which individually carry the cell-to-cell scatter of the peaks.
    let top = top_two_decades(&pts).expect("two decades are available");
    let slope = log_log_slope(&top, 0.0);
    let span = top[top.len() - 1].0 / top[0].0;
    let (growth_half, growth_one) = (span.powf(slope + 0.5), span.powf(slope + 1.0));
    Ok(Classification {
        gevrey4_consistent,
        analytic_excluded: growth_one >= 10.0,
        gevrey2_excluded: growth_half >= 3.0,
        bound_constant: cmax,
        fitted_slope: slope,
        growth_half,
        growth_one,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::eigen_dense;

    fn random_f(n: usize, seed: u64) -> StateVector<c64> {
        random_state(&mut ChaCha8Rng::seed_from_u64(seed), n)
    }

    #[test]
    fn zero_load_gives_zero_state() {
        let m = SystemMatrices::build(&BeamConfig::reference(), 6).unwrap();
        let u = resolvent_solve(&m, 37.0, &StateVector::zeros(m.n())).unwrap();
        assert!(u.u.iter().chain(&u.v).all(|z| z.norm() == 0.0));
    }

    #[test]
    fn solves_pass_substitution_check() {
        let m = SystemMatrices::build(&BeamConfig::reference(), 12).unwrap();
        for (k, lambda) in [0.0, 3.5, 250.0, 4e3].into_iter().enumerate() {
            let f = random_f(m.n(), k as u64);
            let u = resolvent_solve(&m, lambda, &f).unwrap();
            assert!(substitution_residual(&m, lambda, &f, &u).unwrap() <= SUBSTITUTION_TOL);
        }
    }

    #[test]
    fn operator_norm_matches_spectral_radius_when_undamped() {
        // The undamped A_h is G-skew, hence normal: ||A_h||_G = max |mu|.
        let m = SystemMatrices::build(&BeamConfig::conservative(), 6).unwrap();
        let radius = eigen_dense(&m).unwrap().eigenvalues.iter().map(|l| l.norm()).fold(0.0, f64::max);
        let est = operator_norm(&m).unwrap();
        assert!(est <= radius * (1.0 + 1e-9) && est >= 0.8 * radius, "{est} vs {radius}");
    }

    #[test]
    fn smooth_load_on_fine_mesh_passes_backward_error_check() {
        let cfg = BeamConfig::reference();
        let m = SystemMatrices::build(&cfg, 200).unwrap();
        let f2 = m.project_piecewise_constant(&[1.0, -0.5, 2.0, 0.25, -1.5]).unwrap();
        let f = StateVector {
            u: vec![c64::new(0.0, 0.0); m.n()],
            v: f2.iter().map(|x| c64::new(*x, 0.0)).collect(),
        };
        let u = resolvent_solve(&m, 1e3, &f).unwrap();
        assert!(backward_error(&m, 1e3, &f, &u).unwrap() <= SUBSTITUTION_TOL);
    }

    #[test]
    fn norm_at_zero_is_mesh_stable() {
        let cfg = BeamConfig::reference();
        let a = resolvent_norm(&SystemMatrices::build(&cfg, 8).unwrap(), 0.0).unwrap();
        let b = resolvent_norm(&SystemMatrices::build(&cfg, 16).unwrap(), 0.0).unwrap();
        assert!(a.is_finite() && a > 0.0);
        assert!((a - b).abs() <= 0.02 * b, "{a} vs {b}");
    }

    #[test]
    fn lanczos_matches_dense_svd() {
        let m = SystemMatrices::build(&BeamConfig::reference(), 8).unwrap();
        for lambda in [0.0, 27.8, 100.0, 1e3] {
            let d = resolvent_norm_dense(&m, lambda).unwrap();
            let l = resolvent_norm_lanczos(&m, lambda).unwrap();
            assert!((d - l).abs() <= 1e-8 * d, "lambda {lambda}: {d} vs {l}");
        }
    }

    #[test]
    fn norm_is_even_in_lambda() {
        let m = SystemMatrices::build(&BeamConfig::reference(), 8).unwrap();
        for lambda in [1.0, 20.0, 150.0, 600.0, 2e3] {
            let (p, q) = (resolvent_norm(&m, lambda).unwrap(), resolvent_norm(&m, -lambda).unwrap());
            assert!((p - q).abs() <= 1e-9 * p, "{p} vs {q}");
        }
    }

    #[test]
    fn random_probes_stay_below_norm() {
        let m = SystemMatrices::build(&BeamConfig::reference(), 8).unwrap();
        let lambda = 180.0;
        let norm = resolvent_norm(&m, lambda).unwrap();
        let factor = PencilFactor::new(&m, lambda).unwrap();
        for seed in 0..8 {
            let f = random_f(m.n(), 100 + seed);
            let gain = m.energy_norm(&factor.apply_refined(&f)) / m.energy_norm(&f);
            assert!(gain <= norm * (1.0 + 1e-8), "{gain} > {norm}");
        }
    }

    #[test]
    fn norm_exceeds_inverse_distance_to_spectrum() {
        let m = SystemMatrices::build(&BeamConfig::reference(), 6).unwrap();
        let eig = eigen_dense(&m).unwrap();
        for lambda in [0.0, 28.0, 90.0, 400.0] {
            let s = c64::new(0.0, lambda);
            let dist = eig
                .eigenvalues
                .iter()
                .zip(&eig.certified)
                .filter(|(_, c)| **c)
                .map(|(l, _)| (l - s).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(resolvent_norm(&m, lambda).unwrap() >= (1.0 - 1e-9) / dist);
        }
    }

    #[test]
    fn arnoldi_finds_the_dense_eigenvalues() {
        let m = SystemMatrices::build(&BeamConfig::reference(), 10).unwrap();
        let eig = eigen_dense(&m).unwrap();
        let (sigma, radius) = (600.0, 250.0);
        let near = modes_near(&m, sigma, radius).unwrap();
        let s = c64::new(0.0, sigma);
        let dense: Vec<c64> =
            eig.eigenvalues.iter().copied().filter(|l| (l - s).norm() < radius).collect();
        assert_eq!(near.len(), dense.len());
        for l in &dense {
            let best = near.iter().map(|z| (z - l).norm()).fold(f64::INFINITY, f64::min);
            assert!(best <= 1e-8 * l.norm(), "{l} missing");
        }
    }

    #[test]
    fn band_maximum_dominates_point_values() {
        let m = SystemMatrices::build(&BeamConfig::reference(), 10).unwrap();
        let (lo, hi) = (150.0, 500.0);
        let (best, at) = band_maximum(&m, lo, hi, 300.0).unwrap();
        assert!((lo..=hi).contains(&at));
        for k in 0..=40 {
            let w = lo + (hi - lo) * k as f64 / 40.0;
            assert!(resolvent_norm(&m, w).unwrap() <= best * (1.0 + 1e-6));
        }
    }

    #[test]
    fn undamped_band_scan_hits_resonances() {
        let s = scan(&BeamConfig::conservative(), 1e2, 1e3, 4, MeshPolicy::SCAN, Sampling::Band)
            .unwrap();
        assert!(!s.gaps.is_empty());
    }

    #[test]
    fn global_viscosity_is_not_classified_non_analytic() {
        let s = scan(&BeamConfig::globally_viscous(), 1e2, 1e4, 4, MeshPolicy::SCAN, Sampling::Point)
            .unwrap();
        let c = classify(&s).unwrap();
        assert!(!c.analytic_excluded);
        // The resolvent decays like 1/lambda.
        assert!((c.fitted_slope + 1.0).abs() < 0.1, "{}", c.fitted_slope);
    }

    #[test]
    fn one_decade_is_not_enough() {
        let s = scan(&BeamConfig::reference(), 1e2, 1e3, 4, MeshPolicy::SCAN, Sampling::Point)
            .unwrap();
        assert!(matches!(classify(&s), Err(Error::InsufficientConvergedRange { .. })));
    }

    #[test]
    fn scan_invariants() {
        let s = scan(&BeamConfig::reference(), 10.0, 1e3, 4, MeshPolicy::SCAN, Sampling::Point)
            .unwrap();
        assert!(s.lambdas.windows(2).all(|w| w[0] < w[1]));
        for i in 0..s.lambdas.len() {
            assert!(s.norms[i] > 0.0);
            assert_eq!(s.scaled[i], s.lambdas[i].powf(0.25) * s.norms[i]);
        }
        assert!(s.to_csv().starts_with(SCAN_CSV_HEADER));
    }

    #[test]
    fn parses_mesh_policy_and_sampling() {
        assert_eq!("fixed:32".parse::<MeshPolicy>().unwrap(), MeshPolicy::Fixed(32));
        assert_eq!("wavelength:8".parse::<MeshPolicy>().unwrap(), MeshPolicy::SCAN);
        assert!("fixed:0".parse::<MeshPolicy>().is_err());
        assert!("spectral".parse::<MeshPolicy>().is_err());
        assert_eq!("band".parse::<Sampling>().unwrap(), Sampling::Band);
        assert!("peak".parse::<Sampling>().is_err());
    }

    #[test]
    fn rejects_bad_ranges() {
        let cfg = BeamConfig::reference();
        assert!(scan(&cfg, 0.5, 10.0, 8, MeshPolicy::SCAN, Sampling::Point).is_err());
        assert!(scan(&cfg, 10.0, 100.0, 3, MeshPolicy::SCAN, Sampling::Point).is_err());
    }
}
