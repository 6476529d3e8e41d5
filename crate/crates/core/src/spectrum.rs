//! Damped spectrum of the discretized generator.
//!
//! The semi-discrete system `M u'' + D u' + K u = 0` is written in first-order
//! form `U' = A_h U` with `U = (u, v)` and
//! `A_h (u, v) = (v, -M^{-1}(K u + D v))`. Its eigenvalues are the roots of the
//! quadratic pencil `P(lambda) = lambda^2 M + lambda D + K`.

use faer::{c64, Mat};
use serde::Serialize;

use crate::band::BandCholesky;
use crate::error::{Error, Result};
use crate::fem::{StateVector, SystemMatrices};
use crate::format::csv_table;

/// Relative pencil residual below which an eigenpair counts as certified.
pub const CERTIFICATION_TOL: f64 = 1e-8;

/// Largest companion dimension handled by the dense eigensolver.
pub const MAX_DENSE_DIM: usize = 4096;

pub const SPECTRUM_CSV_HEADER: &str = "re_lambda,im_lambda,residual,certified";

/// First-order operator `A_h`, applied through a stored Cholesky factor of `M`.
pub struct FirstOrderOperator<'a> {
    pub matrices: &'a SystemMatrices,
    mass_factor: BandCholesky,
}

pub fn linearize(matrices: &SystemMatrices) -> Result<FirstOrderOperator<'_>> {
    let mass_factor = matrices.mass.cholesky()?;
    Ok(FirstOrderOperator { matrices, mass_factor })
}

impl FirstOrderOperator<'_> {
    pub fn apply(&self, state: &StateVector<c64>) -> StateVector<c64> {
        let m = self.matrices;
        let ku = m.stiffness.mul_cvec(&state.u);
        let dv = m.damping.mul_cvec(&state.v);
        let rhs: Vec<c64> = ku.iter().zip(&dv).map(|(a, b)| -(a + b)).collect();
        StateVector { u: state.v.clone(), v: self.mass_factor.solve_complex(&rhs) }
    }

    /// Dense `2n x 2n` real matrix of `A_h`.
    pub fn to_dense(&self) -> Mat<f64> {
        let m = self.matrices;
        let n = m.n();
        let mut a = Mat::<f64>::zeros(2 * n, 2 * n);
        for i in 0..n {
            a[(i, n + i)] = 1.0;
        }
        let mut col = vec![0.0; n];
        for j in 0..n {
            for (block, src) in [(0, &m.stiffness), (n, &m.damping)] {
                col.iter_mut().for_each(|c| *c = 0.0);
                let lo = j.saturating_sub(src.bandwidth());
                let hi = (j + src.bandwidth()).min(n - 1);
                let mut any = false;
                for i in lo..=hi {
                    col[i] = -src.get(i, j);
                    any |= col[i] != 0.0;
                }
                if !any {
                    continue;
                }
                self.mass_factor.solve_in_place(&mut col);
                for i in 0..n {
                    a[(n + i, block + j)] = col[i];
                }
            }
        }
        a
    }

    /// `-trace(M^{-1} D)`, the trace of `A_h`.
    pub fn trace(&self) -> f64 {
        let m = self.matrices;
        let n = m.n();
        let mut col = vec![0.0; n];
        let mut tr = 0.0;
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = 0.0);
            let lo = j.saturating_sub(m.damping.bandwidth());
            let hi = (j + m.damping.bandwidth()).min(n - 1);
            for i in lo..=hi {
                col[i] = m.damping.get(i, j);
            }
            if col.iter().all(|c| *c == 0.0) {
                continue;
            }
            self.mass_factor.solve_in_place(&mut col);
            tr -= col[j];
        }
        tr
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenResult {
    pub eigenvalues: Vec<c64>,
    /// Displacement parts `u` of the eigenvectors (unit Euclidean norm).
    #[serde(skip)]
    pub eigenvectors: Vec<Vec<c64>>,
    pub residuals: Vec<f64>,
    pub certified: Vec<bool>,
    /// Largest real part over certified pairs.
    pub abscissa: Option<f64>,
}

impl EigenResult {
    /// Certified non-real eigenvalues in the upper half plane, ordered by imaginary part.
    pub fn oscillatory_modes(&self) -> Vec<c64> {
        let mut modes: Vec<c64> = self
            .eigenvalues
            .iter()
            .zip(&self.certified)
            // Rounding leaves real eigenvalues with tiny imaginary parts.
            .filter(|(l, c)| **c && l.im > 1e-6 * l.norm())
            .map(|(l, _)| *l)
            .collect();
        modes.sort_by(|a, b| a.im.total_cmp(&b.im));
        modes
    }

    pub fn to_csv(&self) -> String {
        csv_table(
            SPECTRUM_CSV_HEADER,
            self.eigenvalues.iter().zip(&self.residuals).zip(&self.certified).map(
                |((l, r), c)| vec![l.re, l.im, *r, if *c { 1.0 } else { 0.0 }],
            ),
        )
    }
}

/// All `2n` eigenvalues of `A_h` by dense Hessenberg–QR, with pencil residuals.
pub fn eigen_dense(matrices: &SystemMatrices) -> Result<EigenResult> {
    let n = matrices.n();
    if 2 * n > MAX_DENSE_DIM {
        return Err(Error::InvalidArgument(format!(
            "companion dimension {} exceeds the dense limit {MAX_DENSE_DIM}",
            2 * n
        )));
    }
    let op = linearize(matrices)?;
    // Diagonal balancing with the energy weights sqrt(K_ii), sqrt(M_ii); the
    // rotation DOFs are otherwise scaled by powers of h.
    let weights: Vec<f64> = (0..n)
        .map(|i| matrices.stiffness.get(i, i).sqrt())
        .chain((0..n).map(|i| matrices.mass.get(i, i).sqrt()))
        .collect();
    let raw = op.to_dense();
    let a = Mat::from_fn(2 * n, 2 * n, |i, j| weights[i] * raw[(i, j)] / weights[j]);
    drop(raw);
    let evd = a.eigen().map_err(|_| Error::QrNoConvergence)?;
    let s = evd.S().column_vector();
    let u = evd.U();

    let mut pairs: Vec<(c64, Vec<c64>)> = (0..2 * n)
        .map(|k| {
            let lambda = s[k];
            let mut vec: Vec<c64> = (0..n).map(|i| u[(i, k)] / weights[i]).collect();
            let norm = vec.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > 0.0 {
                vec.iter_mut().for_each(|z| *z /= norm);
            }
            (lambda, vec)
        })
        .collect();
    enforce_conjugate_pairs(&mut pairs);
    // The dense eigensolver's error scales with the largest eigenvalue, which
    // leaves the low modes with poor residuals; polish them on the pencil and
    // carry the result over to the conjugate partner.
    let mut refined: Vec<(c64, c64, Vec<c64>)> = Vec::new();
    for pair in pairs.iter_mut().filter(|p| p.0.im >= 0.0) {
        if let Ok((lambda, vec)) = refine_pair(matrices, pair.0, &pair.1, 4) {
            // Real eigenvalues of the real pencil stay real.
            let lambda = if pair.0.im == 0.0 { c64::new(lambda.re, 0.0) } else { lambda };
            if pair.0.im > 0.0 {
                refined.push((pair.0.conj(), lambda.conj(), vec.iter().map(|z| z.conj()).collect()));
            }
            *pair = (lambda, vec);
        }
    }
    for pair in pairs.iter_mut().filter(|p| p.0.im < 0.0) {
        if let Some((_, lambda, vec)) = refined.iter().find(|r| r.0 == pair.0) {
            *pair = (*lambda, vec.clone());
        }
    }
    pairs.sort_by(|a, b| {
        a.0.norm().total_cmp(&b.0.norm()).then(a.0.im.total_cmp(&b.0.im))
    });

    let mut residuals = Vec::with_capacity(pairs.len());
    for (lambda, vec) in &pairs {
        residuals.push(residual(matrices, *lambda, vec).unwrap_or(f64::INFINITY));
    }
    let certified: Vec<bool> = residuals.iter().map(|r| *r <= CERTIFICATION_TOL).collect();
    let (eigenvalues, eigenvectors): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let mut result = EigenResult { eigenvalues, eigenvectors, residuals, certified, abscissa: None };
    result.abscissa = spectral_abscissa(&result).ok();
    Ok(result)
}

/// Newton-type inverse iteration `x = P(lambda)^{-1} P'(lambda) u` on the
/// pencil. Returns the iterate with the smallest residual; fails only if no
/// step improves on the starting pair.
pub fn refine_pair(
    matrices: &SystemMatrices,
    lambda: c64,
    u: &[c64],
    max_steps: usize,
) -> Result<(c64, Vec<c64>)> {
    let one = c64::new(1.0, 0.0);
    let mut best = (lambda, u.to_vec(), residual(matrices, lambda, u)?);
    let start = best.2;
    let (mut lam, mut vec) = (lambda, u.to_vec());
    for _ in 0..max_steps {
        if best.2 < 1e-14 {
            break;
        }
        let pencil = crate::band::SymBand::complex_combination(&[
            (lam * lam, &matrices.mass),
            (lam, &matrices.damping),
            (one, &matrices.stiffness),
        ]);
        let Ok(lu) = pencil.lu() else { break };
        let mu = matrices.mass.mul_cvec(&vec);
        let du = matrices.damping.mul_cvec(&vec);
        let rhs: Vec<c64> = mu.iter().zip(&du).map(|(m, d)| 2.0 * lam * m + d).collect();
        let x = lu.solve(&rhs);
        let ux: c64 = vec.iter().zip(&x).map(|(a, b)| a.conj() * b).sum();
        let uu: f64 = vec.iter().map(|z| z.norm_sqr()).sum();
        if ux.norm() == 0.0 || !ux.is_finite() {
            break;
        }
        lam -= uu / ux;
        let norm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0 && lam.is_finite()) {
            break;
        }
        vec = x.iter().map(|z| z / norm).collect();
        let r = residual(matrices, lam, &vec)?;
        // Stay on the branch we started from.
        if (lam - lambda).norm() > 1e-2 * lambda.norm().max(1.0) {
            break;
        }
        if r < best.2 {
            best = (lam, vec.clone(), r);
        }
    }
    if best.2 < start {
        Ok((best.0, best.1))
    } else {
        Err(Error::NoConvergence { iterations: max_steps, last: lambda })
    }
}

/// Pairs each eigenvalue in the upper half plane with its closest partner in
/// the lower half plane and makes the partner its exact conjugate.
fn enforce_conjugate_pairs(pairs: &mut [(c64, Vec<c64>)]) {
    let mut used = vec![false; pairs.len()];
    for i in 0..pairs.len() {
        let li = pairs[i].0;
        if li.im <= 0.0 || used[i] {
            continue;
        }
        let best = (0..pairs.len())
            .filter(|&j| !used[j] && j != i && pairs[j].0.im < 0.0)
            .map(|j| (j, (pairs[j].0 - li.conj()).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((j, dist)) = best {
            if dist <= 1e-10 * li.norm().max(1.0) {
                used[i] = true;
                used[j] = true;
                let conj_vec = pairs[i].1.iter().map(|z| z.conj()).collect();
                pairs[j] = (li.conj(), conj_vec);
            }
        }
    }
}

/// `||P(lambda) u|| / (|lambda|^2 ||M u|| + |lambda| ||D u|| + ||K u||)`.
pub fn residual(matrices: &SystemMatrices, lambda: c64, u: &[c64]) -> Result<f64> {
    if u.len() != matrices.n() {
        return Err(Error::DimensionMismatch { expected: matrices.n(), got: u.len() });
    }
    if u.iter().all(|z| *z == c64::new(0.0, 0.0)) {
        return Err(Error::ZeroVector);
    }
    let mu = matrices.mass.mul_cvec(u);
    let du = matrices.damping.mul_cvec(u);
    let ku = matrices.stiffness.mul_cvec(u);
    let norm = |v: &[c64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let r: Vec<c64> = (0..u.len()).map(|i| lambda * lambda * mu[i] + lambda * du[i] + ku[i]).collect();
    let scale = lambda.norm_sqr() * norm(&mu) + lambda.norm() * norm(&du) + norm(&ku);
    Ok(norm(&r) / scale)
}

/// Largest real part over certified eigenpairs.
pub fn spectral_abscissa(result: &EigenResult) -> Result<f64> {
    result
        .eigenvalues
        .iter()
        .zip(&result.certified)
        .filter(|(_, c)| **c)
        .map(|(l, _)| l.re)
        .reduce(f64::max)
        .ok_or(Error::NoCertifiedPairs)
}

/// Largest real part over certified eigenvalues of `coarse` that reappear on
/// the refined mesh `fine` within 2 % of their real part.
///
/// Near the top of the discrete spectrum the eigenvalues are mesh artifacts
/// whose real parts drift towards zero under refinement; this filter keeps
/// only the modes the mesh actually resolves.
pub fn resolved_abscissa(coarse: &EigenResult, fine: &EigenResult) -> Result<f64> {
    let fine_certified: Vec<c64> = fine
        .eigenvalues
        .iter()
        .zip(&fine.certified)
        .filter(|(_, c)| **c)
        .map(|(l, _)| *l)
        .collect();
    coarse
        .eigenvalues
        .iter()
        .zip(&coarse.certified)
        .filter(|(_, c)| **c)
        .map(|(l, _)| *l)
        .filter(|l| {
            let tol = RESOLVED_TOL * l.re.abs();
            fine_certified.iter().any(|m| (m - l).norm() <= tol)
        })
        .map(|l| l.re)
        .reduce(f64::max)
        .ok_or(Error::NoCertifiedPairs)
}

/// Relative tolerance on the real part for [`resolved_abscissa`] and the
/// 2 % refinement rule of [`abscissa_study`].
pub const RESOLVED_TOL: f64 = 0.02;

/// Spectral abscissa on a mesh and its refinement.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AbscissaStudy {
    pub n_per_segment: usize,
    /// Largest certified real part on the mesh.
    pub coarse: f64,
    /// Same on the doubled mesh.
    pub fine: f64,
    /// `coarse` and `fine` agree to 2 %.
    pub converged: bool,
    /// Largest real part over modes resolved by the mesh.
    pub resolved: Option<f64>,
}

pub fn abscissa_study(config: &crate::BeamConfig, n_per_segment: usize) -> Result<AbscissaStudy> {
    let coarse = eigen_dense(&SystemMatrices::build(config, n_per_segment)?)?;
    let fine = eigen_dense(&SystemMatrices::build(config, 2 * n_per_segment)?)?;
    let (a, b) = (spectral_abscissa(&coarse)?, spectral_abscissa(&fine)?);
    let converged = (a - b).abs() <= RESOLVED_TOL * b.abs() || (a == 0.0 && b == 0.0);
    Ok(AbscissaStudy {
        n_per_segment,
        coarse: a,
        fine: b,
        converged,
        resolved: resolved_abscissa(&coarse, &fine).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::band::SymBand;
    use crate::reference::clamped_beam_frequencies;
    use crate::BeamConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_state(n: usize, rng: &mut ChaCha8Rng) -> StateVector<c64> {
        let mut r = || c64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        StateVector { u: (0..n).map(|_| r()).collect(), v: (0..n).map(|_| r()).collect() }
    }

    #[test]
    fn block_structure() {
        let sys = SystemMatrices::build(&BeamConfig::reference(), 3).unwrap();
        let op = linearize(&sys).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = random_state(sys.n(), &mut rng);
        s.v.iter_mut().for_each(|z| *z = c64::new(0.0, 0.0));
        let out = op.apply(&s);
        assert!(out.u.iter().all(|z| z.norm() == 0.0));
        let back = sys.mass.mul_cvec(&out.v);
        let ku = sys.stiffness.mul_cvec(&s.u);
        for (a, b) in back.iter().zip(&ku) {
            assert!((a + b).norm() <= 1e-9 * b.norm().max(1.0));
        }
    }

    #[test]
    fn discrete_dissipativity_and_skewness() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for cfg in [BeamConfig::reference(), BeamConfig::conservative()] {
            let sys = SystemMatrices::build(&cfg, 4).unwrap();
            let op = linearize(&sys).unwrap();
            for _ in 0..10 {
                let s = random_state(sys.n(), &mut rng);
                let q = sys.energy_inner(&op.apply(&s), &s);
                let vdv = sys.damping.sesquilinear(&s.v, &s.v).re;
                let scale = sys.energy_inner(&s, &s).re.max(vdv);
                assert!((q.re + vdv).abs() <= 1e-12 * scale, "{} vs {}", q.re, -vdv);
                if cfg.is_conservative() {
                    assert!(q.re.abs() <= 1e-12 * q.norm().max(1.0));
                }
            }
        }
    }

    #[test]
    fn residual_of_constructed_pencil() {
        // 2x2 diagonal pencil with lambda^2 + 2 lambda + 5 = 0 in the first coordinate.
        let cfg = BeamConfig::reference();
        let mesh = crate::fem::build_mesh(&cfg, 1).unwrap();
        let mut m = SymBand::zeros(2, 1);
        let mut d = SymBand::zeros(2, 1);
        let mut k = SymBand::zeros(2, 1);
        m.add(0, 0, 1.0);
        m.add(1, 1, 1.0);
        d.add(0, 0, 2.0);
        k.add(0, 0, 5.0);
        k.add(1, 1, 3.0);
        let sys = SystemMatrices {
            mesh: Arc::new(mesh),
            config: cfg,
            mass: m,
            stiffness: k,
            damping: d,
        };
        let lambda = c64::new(-1.0, 2.0);
        let u = [c64::new(1.0, 0.0), c64::new(0.0, 0.0)];
        assert!(residual(&sys, lambda, &u).unwrap() <= 1e-14);
        let u10 = [c64::new(10.0, 0.0), c64::new(0.0, 0.0)];
        assert_eq!(residual(&sys, lambda, &u).unwrap(), residual(&sys, lambda, &u10).unwrap());
        let w = [c64::new(0.3, 0.1), c64::new(-0.7, 0.2)];
        assert!(residual(&sys, c64::new(0.2, 0.9), &w).unwrap() > 0.1);
        assert!(matches!(residual(&sys, lambda, &[c64::new(0.0, 0.0); 2]), Err(Error::ZeroVector)));
    }

    #[test]
    fn undamped_spectrum_is_imaginary_and_matches_clamped_beam() {
        let sys = SystemMatrices::build(&BeamConfig::conservative(), 16).unwrap();
        let res = eigen_dense(&sys).unwrap();
        for (l, c) in res.eigenvalues.iter().zip(&res.certified) {
            if *c {
                assert!(l.re.abs() <= 1e-10 * l.norm(), "{l}");
            }
        }
        let modes = res.oscillatory_modes();
        let exact = clamped_beam_frequencies(5, 1.0, 1.0, 1.0);
        for (m, e) in modes.iter().zip(&exact) {
            assert!((m.im - e).abs() <= 1e-5 * e, "{} vs {e}", m.im);
        }
        assert!(spectral_abscissa(&res).unwrap().abs() <= 1e-8);
    }

    #[test]
    fn damped_spectrum_is_stable_and_conjugate_closed() {
        let sys = SystemMatrices::build(&BeamConfig::reference(), 8).unwrap();
        let res = eigen_dense(&sys).unwrap();
        assert!(res.certified.iter().filter(|c| **c).count() > res.eigenvalues.len() / 2);
        for (l, c) in res.eigenvalues.iter().zip(&res.certified) {
            if *c {
                assert!(l.re < 0.0, "{l}");
                assert!(res
                    .eigenvalues
                    .iter()
                    .any(|m| (m - l.conj()).norm() <= 1e-10 * l.norm()));
            }
        }
        let sum = res.eigenvalues.iter().fold(c64::new(0.0, 0.0), |a, b| a + b);
        let trace = linearize(&sys).unwrap().trace();
        assert!((sum.re - trace).abs() <= 1e-6 * trace.abs(), "{sum} vs {trace}");
        assert!(res.abscissa.unwrap() < 0.0);
    }

    #[test]
    fn abscissa_ignores_uncertified_pairs() {
        let sys = SystemMatrices::build(&BeamConfig::reference(), 4).unwrap();
        let mut res = eigen_dense(&sys).unwrap();
        let before = spectral_abscissa(&res).unwrap();
        res.eigenvalues.push(c64::new(5.0, 1.0));
        res.residuals.push(1.0);
        res.certified.push(false);
        assert_eq!(spectral_abscissa(&res).unwrap(), before);
        res.certified.iter_mut().for_each(|c| *c = false);
        assert!(matches!(spectral_abscissa(&res), Err(Error::NoCertifiedPairs)));
    }
}
