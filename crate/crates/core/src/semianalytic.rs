//! Mesh-free oracle: the characteristic determinant of the damped eigenvalue
//! problem built from exact per-segment solutions, root counting and
//! refinement, and a closed-form resolvent for piecewise-constant loads.
//!
//! On each segment the displacement solves `a(lambda) u'''' + lambda^2 rho u = 0`
//! with `a(lambda) = alpha + lambda kappa`. Long segments use the exponentials
//! `exp(mu x)`, `mu in {k, -k, ik, -ik}`, short ones the Cauchy basis
//! (`C_j^{(i)}(a) = delta_ij`). All scalings are tracked so that
//! `det(blocks) * exp(log_scale)` is the same entire function of `lambda`
//! (away from `a(lambda) = 0`) whichever basis is in use.

use faer::linalg::solvers::Solve;
use faer::{c64, Mat};
use serde::Serialize;

use crate::config::{BeamConfig, Segment};
use crate::error::{Error, Result};
use crate::format::csv_table;
use crate::quadrature::gauss_legendre_unit;

pub const ROOTS_CSV_HEADER: &str = "re_lambda,im_lambda,abs_det,iterations";

/// `|k| L` below which the Cauchy basis replaces the exponentials.
const CAUCHY_THRESHOLD: f64 = 1.0;

/// Cap on boundary samples in [`count_roots`].
pub const MAX_BOUNDARY_SAMPLES: usize = 100_000;

#[derive(Debug, Clone)]
enum BasisKind {
    Cauchy,
    /// `exp(mu_j (x - r_j))` with `r_j` the segment end where it peaks.
    Exponential { mu: [c64; 4], reference: [f64; 4] },
}

/// Homogeneous solutions on one segment.
#[derive(Debug, Clone)]
pub struct SegmentBasis {
    pub lambda: c64,
    /// Principal fourth root of `-lambda^2 rho / a(lambda)`.
    pub k: c64,
    pub segment: Segment,
    pub moment_coefficient: c64,
    /// Logarithm of the factor relating this basis to the Cauchy basis.
    pub log_scale: c64,
    kind: BasisKind,
}

pub fn segment_basis(lambda: c64, seg: &Segment) -> Result<SegmentBasis> {
    let a = seg.moment_coefficient(lambda);
    if a.norm() < 1e-14 * seg.alpha {
        return Err(Error::DegenerateCoefficient { lambda, value: a.norm() });
    }
    let k4 = -lambda * lambda * seg.rho / a;
    let k = if k4 == c64::new(0.0, 0.0) {
        k4
    } else {
        c64::from_polar(k4.norm().powf(0.25), k4.arg() / 4.0)
    };
    let len = seg.len();
    let i = c64::new(0.0, 1.0);
    let (kind, log_scale) = if k.norm() * len <= CAUCHY_THRESHOLD {
        (BasisKind::Cauchy, c64::new(0.0, 0.0))
    } else {
        let mu = [k, -k, i * k, -i * k];
        let mut log_scale = c64::new(0.0, 0.0);
        let reference = std::array::from_fn(|j| {
            if mu[j].re > 0.0 {
                log_scale += mu[j] * len;
                seg.b
            } else {
                seg.a
            }
        });
        // Wronskian of the exponentials at `a` is the Vandermonde matrix of mu.
        let mut vandermonde = c64::new(1.0, 0.0);
        for p in 0..4 {
            for q in p + 1..4 {
                vandermonde *= mu[q] - mu[p];
            }
        }
        log_scale -= vandermonde.ln();
        (BasisKind::Exponential { mu, reference }, log_scale)
    };
    Ok(SegmentBasis { lambda, k, segment: *seg, moment_coefficient: a, log_scale, kind })
}

impl SegmentBasis {
    /// `d[i][j]`: derivative of order `i` of basis function `j` at `x`.
    pub fn derivatives(&self, x: f64) -> [[c64; 4]; 4] {
        let mut d = [[c64::new(0.0, 0.0); 4]; 4];
        match &self.kind {
            BasisKind::Exponential { mu, reference } => {
                for j in 0..4 {
                    let e = (mu[j] * (x - reference[j])).exp();
                    let mut p = e;
                    for row in d.iter_mut() {
                        row[j] = p;
                        p *= mu[j];
                    }
                }
            }
            BasisKind::Cauchy => {
                // C_j(t) = sum_m k^{4m} t^{4m+j} / (4m+j)!, t = x - a.
                let t = x - self.segment.a;
                let k4 = self.k.powi(4);
                for (i, row) in d.iter_mut().enumerate() {
                    for (j, entry) in row.iter_mut().enumerate() {
                        let mut sum = c64::new(0.0, 0.0);
                        let mut kpow = c64::new(1.0, 0.0);
                        for m in 0..16 {
                            let n = 4 * m + j;
                            if n >= i {
                                let term = kpow * monomial(t, n - i);
                                sum += term;
                                if m > 2 && term.norm() <= 1e-18 * sum.norm() {
                                    break;
                                }
                            }
                            kpow *= k4;
                        }
                        *entry = sum;
                    }
                }
            }
        }
        d
    }

    /// Relative residual of `a phi'''' + lambda^2 rho phi = 0` for each basis function.
    pub fn ode_residual(&self, x: f64) -> [f64; 4] {
        let d = self.derivatives(x);
        let k4 = self.k.powi(4);
        std::array::from_fn(|j| {
            // phi'''' = k^4 phi, the fourth derivative being k^4 times the value.
            let fourth = match &self.kind {
                BasisKind::Exponential { mu, .. } => mu[j] * d[3][j],
                BasisKind::Cauchy => k4 * d[0][j],
            };
            let lhs = self.moment_coefficient * fourth
                + self.lambda * self.lambda * self.segment.rho * d[0][j];
            let scale = (self.moment_coefficient * fourth).norm()
                + (self.lambda * self.lambda * self.segment.rho * d[0][j]).norm();
            if scale == 0.0 { 0.0 } else { lhs.norm() / scale }
        })
    }

    pub fn is_exponential(&self) -> bool {
        matches!(self.kind, BasisKind::Exponential { .. })
    }
}

/// `t^n / n!`.
fn monomial(t: f64, n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, q| acc * t / q as f64)
}

/// The 20x20 interface system for one spectral parameter.
#[derive(Debug, Clone)]
pub struct CharacteristicSystem {
    pub lambda: c64,
    /// Row- and column-equilibrated coefficient matrix.
    pub blocks: Mat<c64>,
    /// The characteristic function is `det(blocks) * exp(log_scale)`.
    pub log_scale: c64,
    pub bases: Vec<SegmentBasis>,
    row_scale: Vec<f64>,
    col_scale: Vec<f64>,
}

pub fn characteristic_system(lambda: c64, config: &BeamConfig) -> Result<CharacteristicSystem> {
    let segments = config.segments();
    let bases = segments.iter().map(|s| segment_basis(lambda, s)).collect::<Result<Vec<_>>>()?;
    let cuts = config.breakpoints();
    let mut m = Mat::<c64>::zeros(20, 20);

    let left = bases[0].derivatives(cuts[0]);
    for j in 0..4 {
        m[(0, j)] = left[0][j];
        m[(1, j)] = left[1][j];
    }
    for p in 1..5 {
        let x = cuts[p];
        let (gamma_w, gamma_t) = point_gains(config, x);
        let (bl, br) = (&bases[p - 1], &bases[p]);
        let (dl, dr) = (bl.derivatives(x), br.derivatives(x));
        let (al, ar) = (bl.moment_coefficient, br.moment_coefficient);
        let row = 4 * p - 2;
        let (cl, cr) = (4 * (p - 1), 4 * p);
        for j in 0..4 {
            m[(row, cl + j)] = dl[0][j];
            m[(row, cr + j)] = -dr[0][j];
            m[(row + 1, cl + j)] = dl[1][j];
            m[(row + 1, cr + j)] = -dr[1][j];
            // [[a u'']] = gamma_t lambda u'
            m[(row + 2, cl + j)] = -al * dl[2][j] - gamma_t * lambda * dl[1][j];
            m[(row + 2, cr + j)] = ar * dr[2][j];
            // [[a u''']] = -gamma_w lambda u
            m[(row + 3, cl + j)] = -al * dl[3][j] + gamma_w * lambda * dl[0][j];
            m[(row + 3, cr + j)] = ar * dr[3][j];
        }
    }
    let right = bases[4].derivatives(cuts[5]);
    for j in 0..4 {
        m[(18, 16 + j)] = right[0][j];
        m[(19, 16 + j)] = right[1][j];
    }

    let mut log_scale: c64 = bases.iter().map(|b| b.log_scale).sum();
    let mut col_scale = vec![1.0; 20];
    for (j, s) in col_scale.iter_mut().enumerate() {
        let max = (0..20).map(|i| m[(i, j)].norm()).fold(0.0, f64::max);
        if max > 0.0 {
            *s = 1.0 / max;
            log_scale += max.ln();
            for i in 0..20 {
                m[(i, j)] *= *s;
            }
        }
    }
    let mut row_scale = vec![1.0; 20];
    for (i, s) in row_scale.iter_mut().enumerate() {
        let max = (0..20).map(|j| m[(i, j)].norm()).fold(0.0, f64::max);
        if max > 0.0 {
            *s = 1.0 / max;
            log_scale += max.ln();
            for j in 0..20 {
                m[(i, j)] *= *s;
            }
        }
    }
    Ok(CharacteristicSystem { lambda, blocks: m, log_scale, bases, row_scale, col_scale })
}

/// Transverse and rotational point gains acting at the interior breakpoint `x`.
fn point_gains(config: &BeamConfig, x: f64) -> (f64, f64) {
    if x == config.xi1 {
        (config.gamma1, 0.0)
    } else if x == config.xi2 {
        (config.gamma2, config.gamma3)
    } else {
        (0.0, 0.0)
    }
}

impl CharacteristicSystem {
    pub fn det_blocks(&self) -> c64 {
        self.blocks.as_ref().determinant()
    }

    /// Logarithm of the characteristic function; the imaginary part is
    /// defined modulo `2 pi`.
    pub fn log_det(&self) -> c64 {
        self.det_blocks().ln() + self.log_scale
    }

    /// Unit-modulus phase of the characteristic function.
    pub fn phase(&self) -> c64 {
        let d = self.det_blocks();
        let unit = if d.norm() > 0.0 { d / d.norm() } else { d };
        unit * c64::from_polar(1.0, self.log_scale.im)
    }

    /// Ratio of extreme singular values of `blocks`.
    pub fn condition(&self) -> f64 {
        match self.blocks.as_ref().singular_values() {
            Ok(s) => {
                let max = s.iter().cloned().fold(0.0, f64::max);
                let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
                if min > 0.0 { max / min } else { f64::INFINITY }
            }
            Err(_) => f64::INFINITY,
        }
    }

    /// Solves `original * c = rhs` for the unscaled coefficients.
    fn solve(&self, rhs: &[c64]) -> Vec<c64> {
        let b = Mat::from_fn(20, 1, |i, _| rhs[i] * self.row_scale[i]);
        let y = self.blocks.as_ref().partial_piv_lu().solve(&b);
        (0..20).map(|j| y[(j, 0)] * self.col_scale[j]).collect()
    }
}

/// Closed axis-aligned rectangle in the complex plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rect {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Rect {
    pub fn new(re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Result<Self> {
        if !(re_min < re_max && im_min < im_max) {
            return Err(Error::InvalidArgument(format!(
                "empty rectangle [{re_min}, {re_max}] x [{im_min}, {im_max}]"
            )));
        }
        Ok(Self { re_min, re_max, im_min, im_max })
    }

    pub fn contains(&self, z: c64) -> bool {
        self.re_min <= z.re && z.re <= self.re_max && self.im_min <= z.im && z.im <= self.im_max
    }

    /// Corners in counter-clockwise order starting at the lower left.
    fn corners(&self) -> [c64; 4] {
        [
            c64::new(self.re_min, self.im_min),
            c64::new(self.re_max, self.im_min),
            c64::new(self.re_max, self.im_max),
            c64::new(self.re_min, self.im_max),
        ]
    }
}

/// Number of characteristic roots inside `rect`, by the argument principle.
pub fn count_roots(rect: &Rect, config: &BeamConfig) -> Result<usize> {
    let corners = rect.corners();
    let diameter = (corners[2] - corners[0]).norm();
    let mut samples = 0usize;
    let mut phase_at = |z: c64| -> Result<c64> {
        samples += 1;
        if samples > MAX_BOUNDARY_SAMPLES {
            return Err(Error::NonConvergedSampling { samples });
        }
        let p = characteristic_system(z, config)?.phase();
        if p.norm() == 0.0 || !p.is_finite() {
            return Err(Error::BoundaryRoot { near: z });
        }
        Ok(p)
    };

    let mut total = 0.0;
    for e in 0..4 {
        let (z0, z1) = (corners[e], corners[(e + 1) % 4]);
        let pieces = 32;
        let mut prev_z = z0;
        let mut prev_p = phase_at(z0)?;
        for q in 1..=pieces {
            let z = z0 + (z1 - z0) * (q as f64 / pieces as f64);
            let p = phase_at(z)?;
            total += winding_increment(prev_z, prev_p, z, p, diameter, &mut phase_at, 0)?;
            prev_z = z;
            prev_p = p;
        }
    }
    let turns = total / std::f64::consts::TAU;
    if (turns - turns.round()).abs() > 0.05 || turns.round() < 0.0 {
        return Err(Error::NonConvergedSampling { samples });
    }
    Ok(turns.round() as usize)
}

/// Phase change from `z0` to `z1`, bisecting until each step turns by less
/// than a quarter and halves agree with the whole.
fn winding_increment(
    z0: c64,
    p0: c64,
    z1: c64,
    p1: c64,
    diameter: f64,
    phase_at: &mut impl FnMut(c64) -> Result<c64>,
    depth: usize,
) -> Result<f64> {
    let quarter = std::f64::consts::FRAC_PI_2;
    let whole = (p1 / p0).arg();
    let zm = 0.5 * (z0 + z1);
    let pm = phase_at(zm)?;
    let (first, second) = ((pm / p0).arg(), (p1 / pm).arg());
    if whole.abs() < quarter
        && first.abs() < quarter
        && second.abs() < quarter
        && (first + second - whole).abs() < 1e-6
    {
        return Ok(whole);
    }
    if (z1 - z0).norm() < 1e-13 * diameter || depth > 60 {
        return Err(Error::BoundaryRoot { near: zm });
    }
    Ok(winding_increment(z0, p0, zm, pm, diameter, phase_at, depth + 1)?
        + winding_increment(zm, pm, z1, p1, diameter, phase_at, depth + 1)?)
}

/// A root located by [`refine_root`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Root {
    pub lambda: c64,
    /// `|det(blocks)|` at the root.
    pub abs_det: f64,
    pub iterations: usize,
}

pub fn roots_csv(roots: &[Root]) -> String {
    csv_table(
        ROOTS_CSV_HEADER,
        roots.iter().map(|r| vec![r.lambda.re, r.lambda.im, r.abs_det, r.iterations as f64]),
    )
}

const MULLER_MAX_ITER: usize = 50;

/// Muller iteration on the characteristic function, starting at `lambda0`.
pub fn refine_root(lambda0: c64, config: &BeamConfig) -> Result<Root> {
    let reference = characteristic_system(lambda0, config)?.log_det();
    let f = |z: c64| -> Result<c64> {
        Ok((characteristic_system(z, config)?.log_det() - reference).exp())
    };
    let h = 1e-4 * lambda0.norm().max(1.0);
    let mut x = [lambda0 - h, lambda0 + h, lambda0];
    let mut fx = [f(x[0])?, f(x[1])?, f(x[2])?];
    let mut iterations = 0;
    loop {
        if iterations >= MULLER_MAX_ITER {
            return Err(Error::NoConvergence { iterations, last: x[2] });
        }
        iterations += 1;
        let q = (x[2] - x[1]) / (x[1] - x[0]);
        let a = q * fx[2] - q * (1.0 + q) * fx[1] + q * q * fx[0];
        let b = (2.0 * q + 1.0) * fx[2] - (1.0 + q) * (1.0 + q) * fx[1] + q * q * fx[0];
        let c = (1.0 + q) * fx[2];
        let disc = (b * b - 4.0 * a * c).sqrt();
        let den = if (b + disc).norm() >= (b - disc).norm() { b + disc } else { b - disc };
        if den.norm() == 0.0 || !den.is_finite() {
            return Err(Error::NoConvergence { iterations, last: x[2] });
        }
        let next = x[2] - (x[2] - x[1]) * 2.0 * c / den;
        let step = (next - x[2]).norm();
        let f_next = f(next)?;
        x = [x[1], x[2], next];
        fx = [fx[1], fx[2], f_next];
        if f_next.norm() == 0.0 || step <= 1e-14 * next.norm().max(1.0) {
            break;
        }
    }
    let root = x[2];

    // Acceptance against a surrounding box, and a multiplicity probe.
    let r = 1e-3 * root.norm().max(1.0);
    let ring = |radius: f64| -> Result<f64> {
        let mut values = (0..8)
            .map(|j| {
                let z = root + c64::from_polar(radius, j as f64 * std::f64::consts::FRAC_PI_4);
                f(z).map(|v| v.norm())
            })
            .collect::<Result<Vec<f64>>>()?;
        values.sort_by(f64::total_cmp);
        Ok(0.5 * (values[3] + values[4]))
    };
    let (m1, m2) = (ring(r)?, ring(2.0 * r)?);
    let at_root = f(root)?.norm();
    if at_root > 1e-10 * m1 {
        return Err(Error::NoConvergence { iterations, last: root });
    }
    let order = (m2 / m1).log2();
    if order > 1.5 {
        return Err(Error::MultipleRootSuspected { near: root });
    }
    let abs_det = characteristic_system(root, config)?.det_blocks().norm();
    Ok(Root { lambda: root, abs_det, iterations })
}

/// Exact resolvent output `U = (u, lambda i u)` for `F = (0, f2)`, `f2`
/// constant on each of the five segments.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    /// Frequency; the spectral parameter is `s = i lambda`.
    pub lambda: f64,
    pub s: c64,
    pub bases: Vec<SegmentBasis>,
    pub coefficients: Vec<[c64; 4]>,
    /// Constant particular solution `f2 / s^2` on each segment.
    pub particular: [c64; 5],
    /// Energy norm `(int alpha |u''|^2 + rho |s u|^2)^{1/2}`.
    pub norm: f64,
}

impl OracleSolution {
    /// Derivative of order `order` (0..=3) of `u` at `x`; points on a
    /// breakpoint use the segment to their left.
    pub fn eval(&self, x: f64, order: usize) -> c64 {
        let seg = self
            .bases
            .iter()
            .position(|b| x <= b.segment.b)
            .unwrap_or(self.bases.len() - 1);
        let d = self.bases[seg].derivatives(x);
        let mut sum: c64 = (0..4).map(|j| self.coefficients[seg][j] * d[order][j]).sum();
        if order == 0 {
            sum += self.particular[seg];
        }
        sum
    }
}

/// Gauss points per sub-interval of the energy-norm quadrature.
const NORM_GAUSS_POINTS: usize = 32;

pub fn oracle_resolvent(lambda: f64, f2: &[f64; 5], config: &BeamConfig) -> Result<OracleSolution> {
    if lambda == 0.0 {
        return Err(Error::InvalidArgument("oracle resolvent needs lambda != 0".into()));
    }
    let s = c64::new(0.0, lambda);
    let sys = characteristic_system(s, config)?;
    let condition = sys.condition();
    if condition > 1e13 {
        return Err(Error::NearSingular { lambda, condition });
    }
    let particular: [c64; 5] = std::array::from_fn(|q| c64::new(f2[q], 0.0) / (s * s));
    let cuts = config.breakpoints();
    // Rows mirror `characteristic_system`; the particular solution is constant,
    // so only the value rows pick up right-hand sides.
    let mut rhs = vec![c64::new(0.0, 0.0); 20];
    rhs[0] = -particular[0];
    for p in 1..5 {
        let (gamma_w, _) = point_gains(config, cuts[p]);
        let row = 4 * p - 2;
        rhs[row] = particular[p] - particular[p - 1];
        rhs[row + 3] = -gamma_w * s * particular[p - 1];
    }
    rhs[18] = -particular[4];
    let c = sys.solve(&rhs);
    let coefficients: Vec<[c64; 4]> = (0..5).map(|q| std::array::from_fn(|j| c[4 * q + j])).collect();

    let rule = gauss_legendre_unit(NORM_GAUSS_POINTS);
    let mut norm_sq = 0.0;
    for (q, basis) in sys.bases.iter().enumerate() {
        let seg = basis.segment;
        let pieces = ((basis.k.norm() * seg.len() / 2.0).ceil() as usize).max(1);
        let h = seg.len() / pieces as f64;
        for piece in 0..pieces {
            let x0 = seg.a + piece as f64 * h;
            for (t, w) in &rule {
                let d = basis.derivatives(x0 + t * h);
                let u: c64 =
                    (0..4).map(|j| coefficients[q][j] * d[0][j]).sum::<c64>() + particular[q];
                let u2: c64 = (0..4).map(|j| coefficients[q][j] * d[2][j]).sum();
                norm_sq += w * h * (seg.alpha * u2.norm_sqr() + seg.rho * (s * u).norm_sqr());
            }
        }
    }
    Ok(OracleSolution {
        lambda,
        s,
        bases: sys.bases,
        coefficients,
        particular,
        norm: norm_sq.sqrt(),
    })
}
