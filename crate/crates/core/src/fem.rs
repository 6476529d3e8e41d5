//! Cubic Hermite discretization of the clamped transmission beam.
//!
//! Each node carries a displacement and a rotation DOF; free DOFs are
//! numbered node-major after removing the four clamped DOFs at `x = 0` and
//! `x = ell`. Transmission and jump conditions are natural conditions of the
//! weak form, so the only essential constraints are the clamped ends.

use std::sync::Arc;

use faer::c64;
use num_traits::Zero;

use crate::band::SymBand;
use crate::compensated::{two_prod, Dd};
use crate::config::{BeamConfig, Segment};
use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre_unit;

/// Half-bandwidth of every assembled matrix.
pub const BANDWIDTH: usize = 3;

/// Gauss points per element; exact for products of cubics (degree 6 integrands).
const ELEMENT_GAUSS_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element {
    /// Index of the left node; the right node is `left + 1`.
    pub left: usize,
    pub h: f64,
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<f64>,
    pub elements: Vec<Element>,
    pub segments: [Segment; 5],
    pub n_per_segment: usize,
    /// Node indices of `xi1` and `xi2`.
    pub damper_nodes: [usize; 2],
    /// Node indices of `ell0` and `ell1`.
    pub interface_nodes: [usize; 2],
}

impl Mesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of free DOFs, `2 * nodes - 4`.
    pub fn free_dofs(&self) -> usize {
        2 * self.nodes.len() - 4
    }

    /// Free indices `(displacement, rotation)` of a node, `None` at the clamped ends.
    pub fn dof_map(&self, node: usize) -> Option<(usize, usize)> {
        if node == 0 || node + 1 >= self.nodes.len() {
            None
        } else {
            Some((2 * (node - 1), 2 * (node - 1) + 1))
        }
    }

    /// Global (unconstrained) indices of the four clamped DOFs.
    pub fn constrained_dofs(&self) -> [usize; 4] {
        let last = 2 * (self.nodes.len() - 1);
        [0, 1, last, last + 1]
    }

    /// Free index of each of the element's four local DOFs, `None` where clamped.
    pub fn element_dofs(&self, e: &Element) -> [Option<usize>; 4] {
        let left = self.dof_map(e.left);
        let right = self.dof_map(e.left + 1);
        [left.map(|d| d.0), left.map(|d| d.1), right.map(|d| d.0), right.map(|d| d.1)]
    }

    pub fn ell(&self) -> f64 {
        *self.nodes.last().expect("nonempty mesh")
    }

    /// Largest element length.
    pub fn h_max(&self) -> f64 {
        self.elements.iter().map(|e| e.h).fold(0.0, f64::max)
    }

    /// Element containing `x` and the local coordinate in `[0, 1]`.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let idx = self.nodes.partition_point(|&xn| xn <= x);
        let e = idx.saturating_sub(1).min(self.elements.len() - 1);
        let el = &self.elements[e];
        let xl = ((x - self.nodes[el.left]) / el.h).clamp(0.0, 1.0);
        (e, xl)
    }
}

/// Subdivides each of the five segments into `n_per_segment` equal elements.
pub fn build_mesh(config: &BeamConfig, n_per_segment: usize) -> Result<Mesh> {
    if n_per_segment == 0 {
        return Err(Error::InvalidArgument("n_per_segment must be >= 1".into()));
    }
    let segments = config.segments();
    let mut nodes = vec![0.0];
    let mut elements = Vec::with_capacity(5 * n_per_segment);
    for (s, seg) in segments.iter().enumerate() {
        let h = seg.len() / n_per_segment as f64;
        for k in 1..=n_per_segment {
            let x = if k == n_per_segment { seg.b } else { seg.a + k as f64 * h };
            let left = nodes.len() - 1;
            let h_el = x - nodes[left];
            if !(h_el > 0.0) {
                return Err(Error::SingularMass { element: elements.len(), length: h_el });
            }
            elements.push(Element { left, h: h_el, segment: s });
            nodes.push(x);
        }
    }
    let at = |k: usize| k * n_per_segment;
    Ok(Mesh {
        nodes,
        elements,
        segments,
        n_per_segment,
        damper_nodes: [at(1), at(3)],
        interface_nodes: [at(2), at(4)],
    })
}

/// Values (order 0) or physical derivatives (orders 1, 2, 3) of the four cubic
/// Hermite shape functions on an element of length `h`, DOF order
/// `(w_left, theta_left, w_right, theta_right)`.
pub fn hermite_eval(h: f64, x_local: f64, order: usize) -> [f64; 4] {
    let t = x_local;
    match order {
        0 => [
            1.0 - 3.0 * t * t + 2.0 * t * t * t,
            h * (t - 2.0 * t * t + t * t * t),
            3.0 * t * t - 2.0 * t * t * t,
            h * (-t * t + t * t * t),
        ],
        1 => [
            (-6.0 * t + 6.0 * t * t) / h,
            1.0 - 4.0 * t + 3.0 * t * t,
            (6.0 * t - 6.0 * t * t) / h,
            -2.0 * t + 3.0 * t * t,
        ],
        2 => [
            (-6.0 + 12.0 * t) / (h * h),
            (-4.0 + 6.0 * t) / h,
            (6.0 - 12.0 * t) / (h * h),
            (-2.0 + 6.0 * t) / h,
        ],
        3 => [12.0 / (h * h * h), 6.0 / (h * h), -12.0 / (h * h * h), 6.0 / (h * h)],
        _ => panic!("hermite_eval supports orders 0..=3, got {order}"),
    }
}

/// Element mass, stiffness and viscous matrices (`rho`, `alpha`, `kappa` weighted).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementMatrices {
    pub mass: [[f64; 4]; 4],
    pub stiffness: [[f64; 4]; 4],
    pub viscous: [[f64; 4]; 4],
}

/// Closed-form integrals of the Hermite shape functions.
///
/// Quadrature would be exact too, but its rounding breaks the exact null
/// space of the bending matrix (`K` times a rigid motion), and that error is
/// amplified by `h^-4` on fine meshes.
pub fn element_matrices(h: f64, seg: &Segment) -> ElementMatrices {
    let h2 = h * h;
    let bend = [
        [12.0, 6.0 * h, -12.0, 6.0 * h],
        [6.0 * h, 4.0 * h2, -6.0 * h, 2.0 * h2],
        [-12.0, -6.0 * h, 12.0, -6.0 * h],
        [6.0 * h, 2.0 * h2, -6.0 * h, 4.0 * h2],
    ];
    let mass = [
        [156.0, 22.0 * h, 54.0, -13.0 * h],
        [22.0 * h, 4.0 * h2, 13.0 * h, -3.0 * h2],
        [54.0, 13.0 * h, 156.0, -22.0 * h],
        [-13.0 * h, -3.0 * h2, -22.0 * h, 4.0 * h2],
    ];
    let (cm, ck, cv) = (seg.rho * h / 420.0, seg.alpha / (h2 * h), seg.kappa / (h2 * h));
    ElementMatrices {
        mass: mass.map(|row| row.map(|v| cm * v)),
        stiffness: bend.map(|row| row.map(|v| ck * v)),
        viscous: bend.map(|row| row.map(|v| cv * v)),
    }
}

/// Assembled mass `M`, stiffness `K` and damping `D` on the free DOFs.
///
/// The energy Gram matrix is `G = diag(K, M)`; it is not stored.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub mesh: Arc<Mesh>,
    pub config: BeamConfig,
    pub mass: SymBand,
    pub stiffness: SymBand,
    pub damping: SymBand,
}

/// A state `U = (u, v)` in Hermite coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector<T = f64> {
    pub u: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Clone + Zero> StateVector<T> {
    pub fn zeros(n: usize) -> Self {
        Self { u: vec![T::zero(); n], v: vec![T::zero(); n] }
    }
}

impl<T> StateVector<T> {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

impl StateVector<f64> {
    pub fn to_complex(&self) -> StateVector<c64> {
        StateVector {
            u: self.u.iter().map(|&x| c64::new(x, 0.0)).collect(),
            v: self.v.iter().map(|&x| c64::new(x, 0.0)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            u: self.u.iter().map(|x| s * x).collect(),
            v: self.v.iter().map(|x| s * x).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }
}

impl StateVector<c64> {
    pub fn scaled(&self, s: c64) -> Self {
        Self {
            u: self.u.iter().map(|x| s * x).collect(),
            v: self.v.iter().map(|x| s * x).collect(),
        }
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: c64, x: &Self) {
        self.u.iter_mut().zip(&x.u).for_each(|(y, x)| *y += a * x);
        self.v.iter_mut().zip(&x.v).for_each(|(y, x)| *y += a * x);
    }
}

pub fn assemble(mesh: &Mesh, config: &BeamConfig) -> Result<SystemMatrices> {
    let n = mesh.free_dofs();
    let mut mass = SymBand::zeros(n, BANDWIDTH);
    let mut stiffness = SymBand::zeros(n, BANDWIDTH);
    let mut damping = SymBand::zeros(n, BANDWIDTH);
    for (idx, el) in mesh.elements.iter().enumerate() {
        if !(el.h > 0.0) {
            return Err(Error::SingularMass { element: idx, length: el.h });
        }
        let em = element_matrices(el.h, &mesh.segments[el.segment]);
        let dofs = mesh.element_dofs(el);
        for i in 0..4 {
            let Some(gi) = dofs[i] else { continue };
            for j in 0..=i {
                let Some(gj) = dofs[j] else { continue };
                mass.add(gi, gj, em.mass[i][j]);
                stiffness.add(gi, gj, em.stiffness[i][j]);
                if em.viscous[i][j] != 0.0 {
                    damping.add(gi, gj, em.viscous[i][j]);
                }
            }
        }
    }
    let [n1, n2] = mesh.damper_nodes;
    let (w1, _) = mesh.dof_map(n1).expect("xi1 is an interior node");
    let (w2, r2) = mesh.dof_map(n2).expect("xi2 is an interior node");
    if config.gamma1 != 0.0 {
        damping.add(w1, w1, config.gamma1);
    }
    if config.gamma2 != 0.0 {
        damping.add(w2, w2, config.gamma2);
    }
    if config.gamma3 != 0.0 {
        damping.add(r2, r2, config.gamma3);
    }
    Ok(SystemMatrices { mesh: Arc::new(mesh.clone()), config: *config, mass, stiffness, damping })
}

impl SystemMatrices {
    /// Builds the mesh and assembles in one step.
    pub fn build(config: &BeamConfig, n_per_segment: usize) -> Result<Self> {
        assemble(&build_mesh(config, n_per_segment)?, config)
    }

    pub fn n(&self) -> usize {
        self.mass.n()
    }

    fn check(&self, state_len: usize) -> Result<()> {
        if state_len != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: state_len });
        }
        Ok(())
    }

    /// `E = (u^T K u + v^T M v) / 2`.
    pub fn energy(&self, state: &StateVector) -> Result<f64> {
        self.check(state.len())?;
        Ok(0.5 * (self.bending_energy(&state.u) + self.mass.bilinear(&state.v, &state.v)))
    }

    /// `dE/dt = -v^T D v`.
    pub fn dissipation_rate(&self, state: &StateVector) -> Result<f64> {
        self.check(state.len())?;
        Ok(-self.damping.bilinear(&state.v, &state.v))
    }

    /// Energy inner product `<x, y>_G = x_u^H K y_u + x_v^H M y_v`.
    pub fn energy_inner(&self, x: &StateVector<c64>, y: &StateVector<c64>) -> c64 {
        self.stiffness.sesquilinear(&x.u, &y.u) + self.mass.sesquilinear(&x.v, &y.v)
    }

    pub fn energy_norm(&self, x: &StateVector<c64>) -> f64 {
        self.energy_inner(x, x).re.max(0.0).sqrt()
    }

    /// `int alpha |u''|^2` evaluated element by element from curvatures.
    ///
    /// Agrees with `u^H K u` in exact arithmetic, but avoids the cancellation
    /// of forming `K u` for smooth `u` on fine meshes.
    pub fn bending_energy<T: Copy + Into<c64>>(&self, u: &[T]) -> f64 {
        let mesh = &self.mesh;
        // u'' is linear on an element, so two points integrate |u''|^2 exactly.
        let rule = gauss_legendre_unit(2);
        let mut sum = 0.0;
        for el in &mesh.elements {
            let dofs = mesh.element_dofs(el);
            let alpha = mesh.segments[el.segment].alpha;
            for &(t, w) in &rule {
                let n2 = hermite_eval(el.h, t, 2);
                let curvature: c64 = (0..4)
                    .filter_map(|i| dofs[i].map(|g| u[g].into() * n2[i]))
                    .sum();
                sum += w * el.h * alpha * curvature.norm_sqr();
            }
        }
        sum
    }

    /// `sqrt(int alpha |u''|^2 + v^H M v)`, the energy norm with the bending
    /// part taken from [`Self::bending_energy`].
    pub fn state_norm(&self, x: &StateVector<c64>) -> f64 {
        (self.bending_energy(&x.u) + self.mass.sesquilinear(&x.v, &x.v).re).max(0.0).sqrt()
    }

    /// `b - (s^2 M + s D + K) u` in double-word arithmetic, with the element
    /// matrices re-formed from their closed forms.
    ///
    /// Plain evaluation loses about `(k h)^-4` digits for a smooth `u` of
    /// wavenumber `k`; this version is accurate to working precision, which is
    /// what iterative refinement of pencil solves needs.
    pub fn pencil_residual(&self, s: c64, u: &[c64], b: &[c64]) -> Vec<c64> {
        let acc = self.exact_products(u);
        let s2 = s * s;
        (0..self.n())
            .map(|i| {
                let [kr, ki, mr, mi, dr, di] = acc[i];
                let re = Dd::from(b[i].re) - kr - (mr * s2.re - mi * s2.im) - (dr * s.re - di * s.im);
                let im = Dd::from(b[i].im) - ki - (mr * s2.im + mi * s2.re) - (dr * s.im + di * s.re);
                c64::new(re.to_f64(), im.to_f64())
            })
            .collect()
    }

    /// `K u`, `M u`, `D u` in double-word arithmetic, as
    /// `[Re Ku, Im Ku, Re Mu, Im Mu, Re Du, Im Du]` per DOF.
    pub fn exact_products<T: Copy + Into<c64>>(&self, u: &[T]) -> Vec<[Dd; 6]> {
        let mesh = &self.mesh;
        let n = self.n();
        let u: Vec<c64> = u.iter().map(|&z| z.into()).collect();
        let mut acc = vec![[Dd::ZERO; 6]; n];
        let inv420 = Dd::from(420.0).recip();
        for el in &mesh.elements {
            let seg = &mesh.segments[el.segment];
            let h = Dd::from(el.h);
            let h2 = h * h;
            let (six_h, two_h2, four_h2) = (h * 6.0, h2 * 2.0, h2 * 4.0);
            let bend = [
                [Dd::from(12.0), six_h, Dd::from(-12.0), six_h],
                [six_h, four_h2, -six_h, two_h2],
                [Dd::from(-12.0), -six_h, Dd::from(12.0), -six_h],
                [six_h, two_h2, -six_h, four_h2],
            ];
            let mass = [
                [Dd::from(156.0), h * 22.0, Dd::from(54.0), h * -13.0],
                [h * 22.0, h2 * 4.0, h * 13.0, h2 * -3.0],
                [Dd::from(54.0), h * 13.0, Dd::from(156.0), h * -22.0],
                [h * -13.0, h2 * -3.0, h * -22.0, h2 * 4.0],
            ];
            let inv_h3 = (h2 * h).recip();
            let (ck, cv, cm) = (inv_h3 * seg.alpha, inv_h3 * seg.kappa, h * inv420 * seg.rho);
            let dofs = mesh.element_dofs(el);
            for i in 0..4 {
                let Some(gi) = dofs[i] else { continue };
                for j in 0..4 {
                    let Some(gj) = dofs[j] else { continue };
                    let (k, m, d) = (bend[i][j] * ck, mass[i][j] * cm, bend[i][j] * cv);
                    let (re, im) = (u[gj].re, u[gj].im);
                    let a = &mut acc[gi];
                    a[0] = a[0] + k * re;
                    a[1] = a[1] + k * im;
                    a[2] = a[2] + m * re;
                    a[3] = a[3] + m * im;
                    if seg.kappa != 0.0 {
                        a[4] = a[4] + d * re;
                        a[5] = a[5] + d * im;
                    }
                }
            }
        }
        let [n1, n2] = mesh.damper_nodes;
        let (w1, _) = mesh.dof_map(n1).expect("xi1 is an interior node");
        let (w2, r2) = mesh.dof_map(n2).expect("xi2 is an interior node");
        let c = &self.config;
        for (g, gain) in [(w1, c.gamma1), (w2, c.gamma2), (r2, c.gamma3)] {
            acc[g][4] = acc[g][4] + two_prod(gain, u[g].re);
            acc[g][5] = acc[g][5] + two_prod(gain, u[g].im);
        }
        acc
    }

    /// Functional `e` with `e . u = u(x)` (order 0) or `u'(x)` (order 1).
    pub fn eval_vector(&self, x: f64, order: usize) -> Result<Vec<f64>> {
        eval_vector(&self.mesh, &self.config, x, order)
    }

    /// Nonzero entries of `M`, `K` or `D` as coordinate triplets.
    pub fn triplets(&self, which: MatrixKind) -> String {
        let m = match which {
            MatrixKind::Mass => &self.mass,
            MatrixKind::Stiffness => &self.stiffness,
            MatrixKind::Damping => &self.damping,
        };
        crate::format::triplets(m.entries())
    }

    /// Load vector `b_i = int rho f phi_i` for a forcing constant on each segment.
    pub fn load_vector(&self, per_segment: &[f64; 5]) -> Vec<f64> {
        let mesh = &self.mesh;
        let mut b = vec![0.0; self.n()];
        let rule = gauss_legendre_unit(ELEMENT_GAUSS_POINTS);
        for el in &mesh.elements {
            let c = per_segment[el.segment] * mesh.segments[el.segment].rho;
            if c == 0.0 {
                continue;
            }
            let dofs = mesh.element_dofs(el);
            for &(t, w) in &rule {
                let n0 = hermite_eval(el.h, t, 0);
                for i in 0..4 {
                    if let Some(g) = dofs[i] {
                        b[g] += w * el.h * c * n0[i];
                    }
                }
            }
        }
        b
    }

    /// `L^2(rho)`-projection coefficients of a piecewise-constant function.
    pub fn project_piecewise_constant(&self, per_segment: &[f64; 5]) -> Result<Vec<f64>> {
        let b = self.load_vector(per_segment);
        Ok(self.mass.cholesky()?.solve(&b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Mass,
    Stiffness,
    Damping,
}

pub fn eval_vector(mesh: &Mesh, config: &BeamConfig, x: f64, order: usize) -> Result<Vec<f64>> {
    if order > 1 {
        return Err(Error::InvalidArgument(format!("eval order {order} not in {{0, 1}}")));
    }
    if !(0.0..=mesh.ell()).contains(&x) {
        return Err(Error::InvalidArgument(format!("x = {x} outside the beam")));
    }
    if order == 1 {
        config.coeff_at(x)?;
    }
    let mut e = vec![0.0; mesh.free_dofs()];
    let (ei, xl) = mesh.locate(x);
    let el = &mesh.elements[ei];
    let vals = hermite_eval(el.h, xl, order);
    for (dof, val) in mesh.element_dofs(el).into_iter().zip(vals) {
        if let Some(g) = dof {
            e[g] += val;
        }
    }
    // Exact nodal values: drop roundoff contributions from the far node.
    for v in e.iter_mut() {
        if v.abs() < 1e-15 {
            *v = 0.0;
        }
    }
    Ok(e)
}

/// Free Hermite coefficients interpolating `f` and `f'` at the nodes.
pub fn interpolate(mesh: &Mesh, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; mesh.free_dofs()];
    for (k, &x) in mesh.nodes.iter().enumerate() {
        if let Some((w, r)) = mesh.dof_map(k) {
            out[w] = f(x);
            out[r] = df(x);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mesh_counts() {
        let cfg = BeamConfig::reference();
        let m1 = build_mesh(&cfg, 1).unwrap();
        assert_eq!((m1.node_count(), m1.elements.len(), m1.free_dofs()), (6, 5, 8));
        let m4 = build_mesh(&cfg, 4).unwrap();
        assert_eq!((m4.node_count(), m4.elements.len(), m4.free_dofs()), (21, 20, 38));
        assert!(m4.nodes.contains(&0.55));
        for x in cfg.breakpoints() {
            assert!(m4.nodes.contains(&x));
        }
        assert_eq!(m4.nodes[m4.damper_nodes[1]], 0.55);
        assert_eq!(m4.nodes[m4.interface_nodes[0]], 0.4);
        assert!(build_mesh(&cfg, 0).is_err());
    }

    #[test]
    fn elements_stay_inside_segments() {
        let cfg = BeamConfig::reference();
        let mesh = build_mesh(&cfg, 7).unwrap();
        for el in &mesh.elements {
            let seg = &mesh.segments[el.segment];
            let (a, b) = (mesh.nodes[el.left], mesh.nodes[el.left + 1]);
            assert!(a >= seg.a && b <= seg.b);
        }
    }

    #[test]
    fn hermite_basics() {
        assert_eq!(hermite_eval(0.1, 0.0, 0), [1.0, 0.0, 0.0, 0.0]);
        // Displacement shape functions form a partition of unity.
        let n = hermite_eval(0.1, 0.37, 0);
        assert!((n[0] + n[2] - 1.0).abs() < 1e-15);
        let d = hermite_eval(0.1, 1.0, 1);
        for (a, b) in d.iter().zip([0.0, 0.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn hermite_derivatives_match_finite_differences() {
        let h = 0.3;
        for order in 0..3 {
            for t in [0.1, 0.5, 0.8] {
                let eps = 1e-6;
                let lo = hermite_eval(h, t - eps, order);
                let hi = hermite_eval(h, t + eps, order);
                let d = hermite_eval(h, t, order + 1);
                for i in 0..4 {
                    let fd = (hi[i] - lo[i]) / (2.0 * eps * h);
                    assert!((fd - d[i]).abs() < 1e-6 * (1.0 + d[i].abs()));
                }
            }
        }
    }

    #[test]
    fn stiffness_reproduces_cubic_energy() {
        // Unconstrained patch test on the interpolant of a cubic.
        let cfg = BeamConfig { alpha2: 3.0, ..BeamConfig::reference() };
        let mesh = build_mesh(&cfg, 3).unwrap();
        let p = |x: f64| 2.0 - x + 0.5 * x * x - 1.5 * x * x * x;
        let dp = |x: f64| -1.0 + x - 4.5 * x * x;
        // int (1 - 9x)^2 = x - 9x^2 + 27x^3.
        let prim = |x: f64| x - 9.0 * x * x + 27.0 * x * x * x;
        let exact: f64 =
            mesh.segments.iter().map(|s| s.alpha * (prim(s.b) - prim(s.a))).sum();

        let (mut quadratic_form, mut pointwise) = (0.0, 0.0);
        for el in &mesh.elements {
            let seg = mesh.segments[el.segment];
            let em = element_matrices(el.h, &seg);
            let h = el.h;
            let closed = [
                [12.0, 6.0 * h, -12.0, 6.0 * h],
                [6.0 * h, 4.0 * h * h, -6.0 * h, 2.0 * h * h],
                [-12.0, -6.0 * h, 12.0, -6.0 * h],
                [6.0 * h, 2.0 * h * h, -6.0 * h, 4.0 * h * h],
            ];
            let (a, b) = (mesh.nodes[el.left], mesh.nodes[el.left + 1]);
            let c = [p(a), dp(a), p(b), dp(b)];
            for i in 0..4 {
                for j in 0..4 {
                    let k = seg.alpha * closed[i][j] / (h * h * h);
                    assert!((em.stiffness[i][j] - k).abs() <= 1e-12 * k.abs());
                    quadratic_form += c[i] * em.stiffness[i][j] * c[j];
                }
            }
            for (t, w) in gauss_legendre_unit(4) {
                let n2 = hermite_eval(h, t, 2);
                let u2: f64 = (0..4).map(|i| c[i] * n2[i]).sum();
                pointwise += w * h * seg.alpha * u2 * u2;
            }
        }
        assert!((pointwise - exact).abs() <= 1e-12 * exact, "{pointwise} vs {exact}");
        // The assembled quadratic form loses digits to cancellation of O(h^-3) entries.
        assert!((quadratic_form - exact).abs() <= 1e-10 * exact);
    }

    #[test]
    fn undamped_config_has_zero_damping() {
        let sys = SystemMatrices::build(&BeamConfig::conservative(), 4).unwrap();
        assert!(sys.damping.is_zero());
    }

    #[test]
    fn point_damper_quadratic_form() {
        let cfg = BeamConfig { alpha0: 0.0, ..BeamConfig::reference() };
        // alpha0 = 0 with gammas > 0 is not a validated config, but assembly accepts it.
        let sys = SystemMatrices::build(&cfg, 4).unwrap();
        let (w1, _) = sys.mesh.dof_map(sys.mesh.damper_nodes[0]).unwrap();
        let mut v = vec![0.0; sys.n()];
        v[w1] = 1.0;
        assert!((sys.damping.bilinear(&v, &v) - cfg.gamma1).abs() < 1e-15);
        let (_, r2) = sys.mesh.dof_map(sys.mesh.damper_nodes[1]).unwrap();
        let mut v = vec![0.0; sys.n()];
        v[r2] = 1.0;
        assert!((sys.damping.bilinear(&v, &v) - cfg.gamma3).abs() < 1e-15);
    }

    #[test]
    fn matrices_symmetric_and_definite() {
        let sys = SystemMatrices::build(&BeamConfig::reference(), 6).unwrap();
        for m in [&sys.mass, &sys.stiffness] {
            let dense = m.to_dense();
            let eig = dense.self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
            assert!(eig[0] > 0.0);
        }
        let d = sys.damping.to_dense();
        let eig = d.self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
        assert!(eig[0] > -1e-12 * eig.last().unwrap());
        let dense = sys.stiffness.to_dense();
        let asym = (&dense - dense.transpose()).norm_l2();
        assert!(asym <= 1e-13 * dense.norm_l2());
    }

    #[test]
    fn eval_vector_nodes_and_clamps() {
        let cfg = BeamConfig::reference();
        let mesh = build_mesh(&cfg, 4).unwrap();
        let node = 7;
        let e = eval_vector(&mesh, &cfg, mesh.nodes[node], 0).unwrap();
        let (w, _) = mesh.dof_map(node).unwrap();
        for (i, v) in e.iter().enumerate() {
            assert_eq!(*v, if i == w { 1.0 } else { 0.0 });
        }
        assert!(eval_vector(&mesh, &cfg, 0.0, 0).unwrap().iter().all(|v| *v == 0.0));
        assert!(matches!(
            eval_vector(&mesh, &cfg, 0.4, 1),
            Err(Error::OnDiscontinuity { .. })
        ));
    }

    #[test]
    fn eval_vector_interpolation_error_is_fourth_order() {
        // Clamped quartic; Hermite cubic interpolation error at element midpoints is O(h^4).
        let cfg = BeamConfig::reference();
        let f = |x: f64| x * x * (1.0 - x) * (1.0 - x);
        let df = |x: f64| 2.0 * x * (1.0 - x) * (1.0 - 2.0 * x);
        let err = |nps: usize| {
            let mesh = build_mesh(&cfg, nps).unwrap();
            let c = interpolate(&mesh, f, df);
            let el = mesh.elements[mesh.elements.len() / 3];
            let x = mesh.nodes[el.left] + 0.5 * el.h;
            let e = eval_vector(&mesh, &cfg, x, 0).unwrap();
            let val: f64 = e.iter().zip(&c).map(|(a, b)| a * b).sum();
            (val - f(x)).abs()
        };
        let (e1, e2) = (err(4), err(8));
        assert!(e1 < 1e-3);
        let rate = (e1 / e2).log2();
        assert!((3.5..4.5).contains(&rate), "rate {rate}");
    }

    #[test]
    fn energy_properties() {
        let sys = SystemMatrices::build(&BeamConfig::reference(), 4).unwrap();
        let n = sys.n();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = StateVector {
            u: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            v: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        assert_eq!(sys.energy(&StateVector::zeros(n)).unwrap(), 0.0);
        let e = sys.energy(&s).unwrap();
        let flipped = StateVector { u: s.u.clone(), v: s.v.iter().map(|x| -x).collect() };
        assert!((sys.energy(&flipped).unwrap() - e).abs() <= 1e-14 * e);
        assert!((sys.energy(&s.scaled(2.0)).unwrap() - 4.0 * e).abs() <= 1e-13 * e);
        assert!(sys.dissipation_rate(&s).unwrap() <= 0.0);
        assert!(sys.energy(&StateVector::zeros(n + 2)).is_err());
    }

    #[test]
    fn dissipation_vanishes_for_velocity_in_elastic_part() {
        let cfg = BeamConfig::reference();
        let sys = SystemMatrices::build(&cfg, 8).unwrap();
        // Velocity supported on the interior nodes of (ell1, ell).
        let mut v = vec![0.0; sys.n()];
        for (k, &x) in sys.mesh.nodes.iter().enumerate() {
            if x > 0.75 && x < 0.95 {
                let (w, r) = sys.mesh.dof_map(k).unwrap();
                v[w] = x.sin();
                v[r] = x.cos();
            }
        }
        let s = StateVector { u: vec![0.0; sys.n()], v };
        assert_eq!(sys.dissipation_rate(&s).unwrap(), 0.0);
        assert_eq!(sys.dissipation_rate(&StateVector::zeros(sys.n())).unwrap(), 0.0);
    }

    #[test]
    fn triplet_export_is_symmetric() {
        let sys = SystemMatrices::build(&BeamConfig::reference(), 1).unwrap();
        let text = sys.triplets(MatrixKind::Mass);
        let lines: Vec<&str> = text.lines().collect();
        assert!(!lines.is_empty());
        for line in &lines {
            let parts: Vec<&str> = line.split(' ').collect();
            let (i, j) = (parts[0], parts[1]);
            assert!(lines.iter().any(|l| l.starts_with(&format!("{j} {i} "))));
        }
    }
}
