//! Implicit midpoint integration of `U' = A_h U` and the energy balance.
//!
//! With `w = (v_k + v_{k+1}) / 2` the step reduces to one SPD solve
//! `(M + dt/2 D + dt^2/4 K) w = M v_k - dt/2 K u_k`, then
//! `u_{k+1} = u_k + dt w` and `v_{k+1} = 2 w - v_k`.

use faer::{c64, Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::band::{BandCholesky, SymBand};
use crate::error::{Error, Result};
use crate::fem::{StateVector, SystemMatrices};
use crate::format::csv_table;

pub const TRAJECTORY_CSV_HEADER: &str = "t,energy,balance_residual";

/// Energies below this fraction of `E(0)` are left out of decay fits.
pub const ENERGY_FLOOR: f64 = 1e-12;

/// Minimum number of samples in a decay fit window.
pub const MIN_FIT_SAMPLES: usize = 20;

pub struct MidpointStepper<'a> {
    matrices: &'a SystemMatrices,
    dt: f64,
    factor: BandCholesky,
}

impl<'a> MidpointStepper<'a> {
    pub fn new(matrices: &'a SystemMatrices, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step {dt} must be positive")));
        }
        let system = SymBand::real_combination(&[
            (1.0, &matrices.mass),
            (0.5 * dt, &matrices.damping),
            (0.25 * dt * dt, &matrices.stiffness),
        ]);
        let factor = system
            .cholesky()
            .map_err(|e| Error::FactorizationFailure(format!("midpoint matrix: {e}")))?;
        Ok(Self { matrices, dt, factor })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self, state: &StateVector) -> StateVector {
        let m = self.matrices;
        let mv = m.mass.mul_vec(&state.v);
        let ku = m.stiffness.mul_vec(&state.u);
        let rhs: Vec<f64> = mv.iter().zip(&ku).map(|(a, b)| a - 0.5 * self.dt * b).collect();
        let mut w = self.factor.solve(&rhs);
        // Forming K u in floating point loses about (h k)^-4 digits for smooth
        // u, which shows up as energy drift; refine against the step
        // equation M (v - w) - dt/2 D w - dt/2 K (u + dt/2 w) = 0 evaluated
        // in double-word arithmetic.
        for _ in 0..2 {
            let a: Vec<f64> = state.v.iter().zip(&w).map(|(v, w)| v - w).collect();
            let mid: Vec<f64> = state.u.iter().zip(&w).map(|(u, w)| u + 0.5 * self.dt * w).collect();
            let (pa, pw, pm) = (m.exact_products(&a), m.exact_products(&w), m.exact_products(&mid));
            let half = 0.5 * self.dt;
            let r: Vec<f64> = (0..w.len())
                .map(|i| (pa[i][2] - pw[i][4] * half - pm[i][0] * half).to_f64())
                .collect();
            let dw = self.factor.solve(&r);
            w.iter_mut().zip(&dw).for_each(|(a, d)| *a += d);
        }
        StateVector {
            u: state.u.iter().zip(&w).map(|(u, w)| u + self.dt * w).collect(),
            v: state.v.iter().zip(&w).map(|(v, w)| 2.0 * w - v).collect(),
        }
    }
}

/// One implicit midpoint step.
pub fn step_midpoint(matrices: &SystemMatrices, state: &StateVector, dt: f64) -> Result<StateVector> {
    if state.len() != matrices.n() {
        return Err(Error::DimensionMismatch { expected: matrices.n(), got: state.len() });
    }
    Ok(MidpointStepper::new(matrices, dt)?.step(state))
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    /// `r_k = (E_{k+1} - E_k) / dt - (R(U_k) + R(U_{k+1})) / 2`: the discrete
    /// energy change against the trapezoidal average of `dE/dt = -v^T D v`.
    /// It is `O(dt^2)` and measures how well the scheme follows the
    /// continuous-time identity.
    pub balance: Vec<f64>,
    /// `E_{k+1} - E_k - dt R((U_k + U_{k+1}) / 2)`, zero up to rounding for
    /// the midpoint rule.
    pub midpoint_balance: Vec<f64>,
    pub fitted_rate: Option<f64>,
}

impl Trajectory {
    /// Row `k` carries the balance residual of the step ending at `t_k`
    /// (zero in the first row).
    pub fn to_csv(&self) -> String {
        csv_table(
            TRAJECTORY_CSV_HEADER,
            (0..self.times.len()).map(|k| {
                let r = if k == 0 { 0.0 } else { self.balance[k - 1] };
                vec![self.times[k], self.energies[k], r]
            }),
        )
    }

    pub fn max_balance(&self) -> f64 {
        self.balance.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// `E_{k+1} <= E_k` at every step.
    pub fn is_monotone(&self) -> bool {
        self.energies.windows(2).all(|w| w[1] <= w[0])
    }
}

pub fn simulate(matrices: &SystemMatrices, u0: &StateVector, t_end: f64, dt: f64) -> Result<Trajectory> {
    if u0.len() != matrices.n() {
        return Err(Error::DimensionMismatch { expected: matrices.n(), got: u0.len() });
    }
    if !(t_end > 0.0 && dt <= t_end) {
        return Err(Error::InvalidArgument(format!("need T > 0 and dt <= T (T = {t_end}, dt = {dt})")));
    }
    let stepper = MidpointStepper::new(matrices, dt)?;
    let steps = (t_end / dt).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut energies = Vec::with_capacity(steps + 1);
    let mut balance = Vec::with_capacity(steps);
    let mut midpoint_balance = Vec::with_capacity(steps);
    let mut state = u0.clone();
    let mut energy = matrices.energy(&state)?;
    let mut rate = matrices.dissipation_rate(&state)?;
    times.push(0.0);
    energies.push(energy);
    for k in 0..steps {
        let next = stepper.step(&state);
        let next_energy = matrices.energy(&next)?;
        let next_rate = matrices.dissipation_rate(&next)?;
        let mid = StateVector {
            u: state.u.iter().zip(&next.u).map(|(a, b)| 0.5 * (a + b)).collect(),
            v: state.v.iter().zip(&next.v).map(|(a, b)| 0.5 * (a + b)).collect(),
        };
        let de = next_energy - energy;
        balance.push(de / dt - 0.5 * (rate + next_rate));
        midpoint_balance.push(de - dt * matrices.dissipation_rate(&mid)?);
        times.push((k + 1) as f64 * dt);
        energies.push(next_energy);
        (state, energy, rate) = (next, next_energy, next_rate);
    }
    let fitted_rate = fit_decay(&times, &energies).ok().map(|f| f.rate);
    Ok(Trajectory { times, energies, balance, midpoint_balance, fitted_rate })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    /// `-d log E / dt`.
    pub rate: f64,
    /// Residual standard error of the fitted slope.
    pub stderr: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

/// Least-squares slope of `log E` over `[T'/4, 3T'/4]`, where `T'` is the
/// last time before `E` first falls under `1e-12 E(0)` (the full span if it
/// never does).
pub fn fit_decay(times: &[f64], energies: &[f64]) -> Result<DecayFit> {
    if times.len() != energies.len() || times.is_empty() {
        return Err(Error::DimensionMismatch { expected: times.len(), got: energies.len() });
    }
    let e0 = energies[0];
    if !(e0 > 0.0) {
        return Err(Error::InsufficientDecay { factor: 1.0 });
    }
    let above = energies.iter().position(|&e| !(e >= ENERGY_FLOOR * e0)).unwrap_or(energies.len());
    let lowest = energies[..above].iter().cloned().fold(f64::INFINITY, f64::min);
    if lowest > 0.1 * e0 {
        return Err(Error::InsufficientDecay { factor: e0 / lowest });
    }
    let (t0, t1) = (times[0], times[above - 1]);
    let window = (t0 + 0.25 * (t1 - t0), t0 + 0.75 * (t1 - t0));
    let pts: Vec<(f64, f64)> = (0..above)
        .filter(|&k| times[k] >= window.0 && times[k] <= window.1)
        .map(|k| (times[k], energies[k].ln()))
        .collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "only {} samples in the fit window, need {MIN_FIT_SAMPLES}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let ssr: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    let stderr = (ssr / (n - 2.0) / sxx).sqrt();
    Ok(DecayFit { rate: -slope, stderr, window, samples: pts.len() })
}

/// Comparison of a fitted decay rate with twice the spectral abscissa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayReport {
    pub rate: f64,
    pub stderr: f64,
    pub abscissa_ref: f64,
    /// `rate / (2 |abscissa_ref|)`.
    pub ratio: f64,
}

impl DecayReport {
    pub fn new(fit: &DecayFit, abscissa: f64) -> Self {
        Self {
            rate: fit.rate,
            stderr: fit.stderr,
            abscissa_ref: abscissa,
            ratio: fit.rate / (2.0 * abscissa.abs()),
        }
    }
}

/// Lowest `count` modes of `K x = w^2 M x` (ignoring damping), as
/// `(w, x)` with `x^T M x = 1`.
pub fn undamped_modes(matrices: &SystemMatrices, count: usize) -> Result<Vec<(f64, Vec<f64>)>> {
    let n = matrices.n();
    let l = matrices.mass.cholesky().map_err(|_| Error::CholeskyFailure)?.factor_dense();
    let l_inv = faer::linalg::solvers::DenseSolveCore::inverse(&l.partial_piv_lu());
    let k = matrices.stiffness.to_dense();
    let c = &l_inv * &k * l_inv.transpose();
    let c = Mat::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let evd = c.self_adjoint_eigen(Side::Lower).map_err(|_| Error::QrNoConvergence)?;
    let s = evd.S().column_vector();
    let y = evd.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    Ok(order
        .into_iter()
        .take(count)
        .map(|j| {
            let x: Vec<f64> = (0..n).map(|i| (0..n).map(|r| l_inv[(r, i)] * y[(r, j)]).sum()).collect();
            (s[j].max(0.0).sqrt(), x)
        })
        .collect())
}

/// Real part of the slowest-decaying oscillatory eigenmode plus a seeded
/// 10 % mix of the next five, normalized to `||U||_G = 1`.
///
/// Built from damped eigenvectors so that the data stay in the span of
/// resolved modes. Undamped mode shapes would not: the point dampers and the
/// viscous segment immediately feed the stiff modes, and the midpoint rule,
/// which is not L-stable, maps those to slowly decaying sign flips.
pub fn first_mode_state(matrices: &SystemMatrices, seed: u64) -> Result<StateVector> {
    let eig = crate::spectrum::eigen_dense(matrices)?;
    let mut modes: Vec<(c64, &Vec<c64>)> = eig
        .eigenvalues
        .iter()
        .zip(&eig.eigenvectors)
        .zip(&eig.certified)
        .filter(|((l, _), c)| **c && l.im > 1e-6 * l.norm())
        .map(|((l, u), _)| (*l, u))
        .collect();
    if modes.is_empty() {
        return Err(Error::NoCertifiedPairs);
    }
    modes.sort_by(|a, b| a.0.im.total_cmp(&b.0.im));
    let normalized = |lambda: c64, u: &[c64]| -> Result<StateVector> {
        let state = StateVector {
            u: u.iter().map(|z| z.re).collect(),
            v: u.iter().map(|z| (lambda * z).re).collect(),
        };
        let norm = (2.0 * matrices.energy(&state)?).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(state.scaled(1.0 / norm))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = normalized(modes[0].0, modes[0].1)?;
    for (lambda, u) in modes.iter().skip(1).take(5) {
        let c = 0.1 * rng.gen_range(-1.0..1.0);
        let extra = normalized(*lambda, u)?;
        state.u.iter_mut().zip(&extra.u).for_each(|(a, b)| *a += c * b);
        state.v.iter_mut().zip(&extra.v).for_each(|(a, b)| *a += c * b);
    }
    let norm = (2.0 * matrices.energy(&state)?).sqrt();
    Ok(state.scaled(1.0 / norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BeamConfig;

    #[test]
    fn zero_state_stays_zero() {
        let m = SystemMatrices::build(&BeamConfig::reference(), 4).unwrap();
        let z = StateVector::zeros(m.n());
        assert_eq!(step_midpoint(&m, &z, 1e-3).unwrap(), z);
        let traj = simulate(&m, &z, 0.1, 1e-2).unwrap();
        assert!(traj.energies.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn undamped_energy_is_conserved() {
        let m = SystemMatrices::build(&BeamConfig::conservative(), 6).unwrap();
        let u0 = first_mode_state(&m, 1).unwrap();
        let traj = simulate(&m, &u0, 1.0, 1e-3).unwrap();
        let e0 = traj.energies[0];
        assert!(traj.energies.iter().all(|e| (e - e0).abs() <= 1e-12 * e0));
    }

    #[test]
    fn damped_energy_decreases() {
        let m = SystemMatrices::build(&BeamConfig::reference(), 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut draw = |k: usize| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let u0 = StateVector { u: draw(m.n()), v: draw(m.n()) };
        let traj = simulate(&m, &u0, 0.1, 1e-3).unwrap();
        assert!(traj.energies.windows(2).all(|w| w[1] < w[0]));
        let e0 = traj.energies[0];
        assert!(traj.midpoint_balance.iter().all(|r| r.abs() <= 1e-12 * e0));
    }

    #[test]
    fn exact_exponential_rate() {
        let times: Vec<f64> = (0..=400).map(|k| k as f64 * 0.01).collect();
        let energies: Vec<f64> = times.iter().map(|t| (-3.0 * t).exp()).collect();
        let fit = fit_decay(&times, &energies).unwrap();
        assert!((fit.rate - 3.0).abs() < 1e-10);
        assert!(fit.stderr < 1e-10);
    }

    #[test]
    fn constant_energy_does_not_decay() {
        let times: Vec<f64> = (0..100).map(|k| k as f64).collect();
        assert!(matches!(
            fit_decay(&times, &vec![2.0; 100]),
            Err(Error::InsufficientDecay { .. })
        ));
    }

    #[test]
    fn modes_are_mass_orthonormal() {
        let m = SystemMatrices::build(&BeamConfig::conservative(), 6).unwrap();
        let modes = undamped_modes(&m, 4).unwrap();
        for (i, (w, x)) in modes.iter().enumerate() {
            let kx = m.stiffness.mul_vec(x);
            let mx = m.mass.mul_vec(x);
            assert!(kx.iter().zip(&mx).all(|(a, b)| (a - w * w * b).abs() <= 1e-8 * w * w));
            for (_, y) in &modes[..i] {
                assert!(m.mass.bilinear(x, y).abs() < 1e-10);
            }
            assert!((m.mass.bilinear(x, x) - 1.0).abs() < 1e-10);
        }
        let beta = crate::reference::clamped_beam_roots(1)[0];
        assert!((modes[0].0 / (beta * beta) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn simulation_is_deterministic() {
        let m = SystemMatrices::build(&BeamConfig::reference(), 4).unwrap();
        let a = simulate(&m, &first_mode_state(&m, 9).unwrap(), 0.05, 1e-3).unwrap();
        let b = simulate(&m, &first_mode_state(&m, 9).unwrap(), 0.05, 1e-3).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.to_csv().starts_with(TRAJECTORY_CSV_HEADER));
    }
}
