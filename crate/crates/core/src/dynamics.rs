//! Lindblad propagation and two-time correlations by quantum regression.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::{IntegratorConfig, ResolvedWindow, Rhs, Stepper};
use crate::linalg::{commutator_triplets, dissipator_triplets, Matrix, SparseOp};
use crate::model::{GaussianPulse, SystemModel};
use crate::scalar::{cr, Real, C};

/// Eigenvalue below which propagation aborts.
const NONPHYSICAL_EIGENVALUE: f64 = -1e-6;

/// Vectorized generator `L(t) = L₀ + Σ_k Ω_k(t) L_k` of a [`SystemModel`].
#[derive(Clone, Debug)]
pub struct Liouvillian<T: Real> {
    dim: usize,
    static_part: SparseOp<T>,
    drives: Vec<(GaussianPulse<T>, SparseOp<T>)>,
}

impl<T: Real> Liouvillian<T> {
    pub fn new(system: &SystemModel<T>) -> Self {
        let d = system.dim();
        let mut trip = commutator_triplets(system.static_hamiltonian());
        for ch in system.channels() {
            if ch.rate > T::zero() {
                trip.extend(dissipator_triplets(&ch.operator, ch.rate));
            }
        }
        let static_part = SparseOp::from_triplets(d * d, trip);
        let drives = system
            .drives()
            .iter()
            .map(|dr| (dr.envelope, SparseOp::from_triplets(d * d, commutator_triplets(&dr.operator))))
            .collect();
        Self { dim: d, static_part, drives }
    }

    /// Hilbert-space dimension.
    pub fn hilbert_dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.static_part.nnz() + self.drives.iter().map(|(_, op)| op.nnz()).sum::<usize>()
    }
}

impl<T: Real> Rhs<T> for Liouvillian<T> {
    fn dim(&self) -> usize {
        self.dim * self.dim
    }

    fn eval(&self, t: T, y: &[C<T>], dy: &mut [C<T>]) {
        self.static_part.apply(y, dy);
        for (pulse, op) in &self.drives {
            let a = pulse.amplitude(t);
            // the envelope underflows to exactly zero far from the pulse
            if a != T::zero() {
                op.apply_add(cr(a), y, dy);
            }
        }
    }
}

/// Windows inside which the integrator must take at least
/// `min_steps_per_pulse` steps.
pub fn pulse_windows<T: Real>(system: &SystemModel<T>) -> Vec<ResolvedWindow<T>> {
    system
        .pulses()
        .filter(|p| p.area > T::zero())
        .map(|p| {
            let (start, end) = p.window(T::lit(4.0));
            ResolvedWindow { start, end }
        })
        .collect()
}

/// Absolute-tolerance weights for sensor-extended models: entries with `n`
/// and `m` sensor quanta scale like `s^{n+m}`, `s = ε·min(2/Γ, 1)`.
pub fn tolerance_weights<T: Real>(system: &SystemModel<T>) -> Option<Vec<T>> {
    let sensor = system.sensor()?;
    let levels = sensor.truncation + 1;
    let s = sensor.coupling * (T::lit(2.0) / sensor.bandwidth).min(T::one());
    if !(s > T::zero()) {
        return None;
    }
    let d = system.dim();
    let pow: Vec<T> = (0..=2 * sensor.truncation).map(|k| s.powi(k as i32)).collect();
    let mut w = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            w.push(pow[i % levels + j % levels]);
        }
    }
    Some(w)
}

/// A density matrix that passed the physicality checks at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix<T: Real>(Matrix<T>);

impl<T: Real> DensityMatrix<T> {
    pub fn new(m: Matrix<T>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch { expected: m.rows(), found: m.cols() });
        }
        let herm = m.hermiticity_violation().to_f64_lossy();
        if herm > 1e-10 {
            return Err(Error::InvalidParameter(format!("density matrix not Hermitian ({herm:e})")));
        }
        let tr = m.trace();
        if (tr.re.to_f64_lossy() - 1.0).abs() > 1e-8 || tr.im.to_f64_lossy().abs() > 1e-8 {
            return Err(Error::InvalidParameter(format!("density matrix trace {tr} != 1")));
        }
        let min_ev = m.hermitian_eigenvalues()[0];
        if min_ev < -1e-8 {
            return Err(Error::NonPhysicalState { t: f64::NAN, min_eigenvalue: min_ev });
        }
        Ok(Self(m))
    }

    /// Pure basis state `|index⟩⟨index|`.
    pub fn basis(dim: usize, index: usize) -> Self {
        Self(Matrix::outer(dim, index, index))
    }

    /// Wraps a propagated state without re-validating it.
    pub(crate) fn from_propagated(m: Matrix<T>) -> Self {
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.0
    }

    pub fn population(&self, index: usize) -> T {
        self.0[(index, index)].re
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory<T: Real> {
    pub times: Vec<T>,
    pub states: Vec<DensityMatrix<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn check_grid<T: Real>(times: &[T]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidParameter("time grid is empty".into()));
    }
    if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter(format!("time grid not strictly increasing at index {}", i + 1)));
    }
    Ok(())
}

/// Propagates `rho0` (given at `times[0]`) and records the state at every
/// grid time.
pub fn propagate<T: Real>(
    system: &SystemModel<T>,
    rho0: &DensityMatrix<T>,
    times: &[T],
    cfg: &IntegratorConfig,
) -> Result<Trajectory<T>> {
    let liouv = Liouvillian::new(system);
    propagate_with(&liouv, system, rho0, times, cfg)
}

pub(crate) fn propagate_with<T: Real>(
    liouv: &Liouvillian<T>,
    system: &SystemModel<T>,
    rho0: &DensityMatrix<T>,
    times: &[T],
    cfg: &IntegratorConfig,
) -> Result<Trajectory<T>> {
    cfg.validate()?;
    check_grid(times)?;
    if rho0.dim() != system.dim() {
        return Err(Error::DimensionMismatch { expected: system.dim(), found: rho0.dim() });
    }
    let d = system.dim();
    let mut stepper =
        Stepper::new(liouv, *cfg, pulse_windows(system)).with_component_scale(tolerance_weights(system));
    let mut y = rho0.matrix().as_slice().to_vec();
    let mut states = Vec::with_capacity(times.len());
    states.push(rho0.clone());
    for w in times.windows(2) {
        stepper.advance(&mut y, w[0], w[1])?;
        let m = Matrix::from_vec(d, d, y.clone());
        let min_ev = m.hermitian_eigenvalues()[0];
        if min_ev < NONPHYSICAL_EIGENVALUE || !min_ev.is_finite() {
            return Err(Error::NonPhysicalState { t: w[1].to_f64_lossy(), min_eigenvalue: min_ev });
        }
        states.push(DensityMatrix::from_propagated(m));
    }
    Ok(Trajectory { times: times.to_vec(), states })
}

/// `tr(op · ρ(t))` along a trajectory.
pub fn expectation<T: Real>(traj: &Trajectory<T>, op: &Matrix<T>) -> Result<Vec<C<T>>> {
    traj.states
        .iter()
        .map(|s| {
            if op.rows() != s.dim() || op.cols() != s.dim() {
                return Err(Error::DimensionMismatch { expected: s.dim(), found: op.rows() });
            }
            Ok(op.trace_product(s.matrix()))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhysicalityReport {
    pub max_trace_drift: f64,
    pub max_hermiticity_violation: f64,
    pub min_eigenvalue: f64,
}

impl PhysicalityReport {
    /// Thresholds every acceptance propagation must meet.
    pub fn is_physical(&self) -> bool {
        self.max_trace_drift < 1e-8 && self.max_hermiticity_violation < 1e-10 && self.min_eigenvalue >= -1e-8
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            max_trace_drift: self.max_trace_drift.max(other.max_trace_drift),
            max_hermiticity_violation: self.max_hermiticity_violation.max(other.max_hermiticity_violation),
            min_eigenvalue: self.min_eigenvalue.min(other.min_eigenvalue),
        }
    }
}

pub fn physicality_report<T: Real>(traj: &Trajectory<T>) -> PhysicalityReport {
    let mut rep = PhysicalityReport {
        max_trace_drift: 0.0,
        max_hermiticity_violation: 0.0,
        min_eigenvalue: f64::INFINITY,
    };
    for s in &traj.states {
        let m = s.matrix();
        let tr = m.trace();
        let drift = ((tr.re.to_f64_lossy() - 1.0).powi(2) + tr.im.to_f64_lossy().powi(2)).sqrt();
        rep.max_trace_drift = rep.max_trace_drift.max(drift);
        rep.max_hermiticity_violation = rep.max_hermiticity_violation.max(m.hermiticity_violation().to_f64_lossy());
        rep.min_eigenvalue = rep.min_eigenvalue.min(m.hermitian_eigenvalues()[0]);
    }
    rep
}

/// Two-time correlation `G(t₁,t₂)` sampled on a square grid, row-major in
/// `t₁`.
#[derive(Clone, Debug)]
pub struct CorrelationGrid<T: Real> {
    pub times: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Real> CorrelationGrid<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.times.len() + j]
    }

    /// `Σ_ij w_i w_j G_ij` for 1D quadrature weights `w`.
    pub fn integrate(&self, weights: &[T]) -> T {
        let n = self.times.len();
        assert_eq!(weights.len(), n);
        let mut acc = T::zero();
        for i in 0..n {
            let row = &self.values[i * n..(i + 1) * n];
            let s: T = row.iter().zip(weights).map(|(&g, &w)| g * w).sum();
            acc = acc + weights[i] * s;
        }
        acc
    }

    /// CSV with columns `t1,t2,value`, preceded by a unit comment line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# time_unit=1/gamma_sigma")?;
        writeln!(out, "t1,t2,value")?;
        for (i, &t1) in self.times.iter().enumerate() {
            for (j, &t2) in self.times.iter().enumerate() {
                writeln!(out, "{t1},{t2},{:e}", self.get(i, j))?;
            }
        }
        Ok(())
    }
}

/// Result of a regression run: the forward trajectory and the map.
#[derive(Clone, Debug)]
pub struct RegressionRun<T: Real> {
    pub trajectory: Trajectory<T>,
    pub map: CorrelationGrid<T>,
}

/// `G(t₁,t₂) = tr[e†e · Λ(t₂←t₁){e ρ(t₁) e†}]` for `t₂ ≥ t₁`, mirrored to
/// `t₂ < t₁`. The system starts in its ground state at `times[0]`.
pub fn two_time_g2_map<T: Real>(
    system: &SystemModel<T>,
    emit: &Matrix<T>,
    times: &[T],
    cfg: &IntegratorConfig,
) -> Result<RegressionRun<T>> {
    let liouv = Liouvillian::new(system);
    let rho0 = DensityMatrix::basis(system.dim(), 0);
    let trajectory = propagate_with(&liouv, system, &rho0, times, cfg)?;
    let map = regression_map(&liouv, system, &trajectory, emit, cfg)?;
    Ok(RegressionRun { trajectory, map })
}

pub(crate) fn regression_map<T: Real>(
    liouv: &Liouvillian<T>,
    system: &SystemModel<T>,
    traj: &Trajectory<T>,
    emit: &Matrix<T>,
    cfg: &IntegratorConfig,
) -> Result<CorrelationGrid<T>> {
    let d = system.dim();
    if emit.rows() != d || emit.cols() != d {
        return Err(Error::DimensionMismatch { expected: d, found: emit.rows() });
    }
    let n = traj.len();
    let emit_dag = emit.adjoint();
    let number = &emit_dag * emit;
    let times = &traj.times;
    let windows = pulse_windows(system);
    let weights = tolerance_weights(system);

    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<T>> {
            let collapsed = &(emit * traj.states[i].matrix()) * &emit_dag;
            let weight = collapsed.trace().re;
            let mut row = vec![T::zero(); n - i];
            if !(weight > T::zero()) {
                return Ok(row);
            }
            let mut stepper = Stepper::new(liouv, *cfg, windows.clone())
                .with_abs_scale(weight)
                .with_component_scale(weights.clone());
            let mut y = collapsed.into_vec();
            row[0] = trace_product_vec(&number, &y, d);
            for j in (i + 1)..n {
                stepper.advance(&mut y, times[j - 1], times[j])?;
                row[j - i] = trace_product_vec(&number, &y, d);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let mut values = vec![T::zero(); n * n];
    for (i, row) in rows.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            let j = i + k;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(CorrelationGrid { times: times.clone(), values })
}

/// `Re tr(A · Y)` for a row-major vectorized `Y`.
pub(crate) fn trace_product_vec<T: Real>(a: &Matrix<T>, y: &[C<T>], d: usize) -> T {
    let mut acc = C::new(T::zero(), T::zero());
    for i in 0..d {
        for k in 0..d {
            let aik = a[(i, k)];
            if aik.re != T::zero() || aik.im != T::zero() {
                acc = acc + aik * y[k * d + i];
            }
        }
    }
    acc.re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_two_level, GaussianPulse, TwoLevelConfig};
    use std::f64::consts::PI;

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn free_decay_matches_exponential() {
        let p = GaussianPulse::new(0.0, 0.05).unwrap();
        let m = build_two_level(&TwoLevelConfig::default(), &p).unwrap();
        let times = linspace(0.0, 12.0, 61);
        let traj = propagate(&m, &DensityMatrix::basis(2, 1), &times, &IntegratorConfig::default()).unwrap();
        let pop = expectation(&traj, &m.basis_projector(1)).unwrap();
        for (t, e) in times.iter().zip(&pop) {
            assert!((e.re - (-t).exp()).abs() < 1e-7);
        }
        let id = expectation(&traj, &Matrix::identity(2)).unwrap();
        assert!(id.iter().all(|z| (z.re - 1.0).abs() < 1e-8));
        assert!(physicality_report(&traj).is_physical());
    }

    #[test]
    fn expectation_dimension_mismatch() {
        let p = GaussianPulse::new(0.0, 0.05).unwrap();
        let m = build_two_level(&TwoLevelConfig::default(), &p).unwrap();
        let traj = propagate(&m, &DensityMatrix::basis(2, 1), &[0.0, 1.0], &IntegratorConfig::default()).unwrap();
        assert!(matches!(
            expectation(&traj, &Matrix::identity(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn g2_map_diagonal_vanishes_and_is_symmetric() {
        let p = GaussianPulse::with_offset(PI, 0.05, 0.2).unwrap();
        let m = build_two_level(&TwoLevelConfig::default(), &p).unwrap();
        let times = linspace(0.0, 3.0, 41);
        let run = two_time_g2_map(&m, m.output_op("sigma").unwrap(), &times, &IntegratorConfig::default()).unwrap();
        for i in 0..times.len() {
            assert_eq!(run.map.get(i, i), 0.0);
            for j in 0..times.len() {
                assert!((run.map.get(i, j) - run.map.get(j, i)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(Matrix::<f64>::identity(2)).is_err());
        let mut m = Matrix::<f64>::identity(2).scale_real(0.5);
        assert!(DensityMatrix::new(m.clone()).is_ok());
        m[(0, 1)] = C::new(0.1, 0.0);
        assert!(DensityMatrix::new(m).is_err());
    }

    #[test]
    fn unsorted_grid_rejected() {
        let p = GaussianPulse::new(0.0, 0.05).unwrap();
        let m = build_two_level(&TwoLevelConfig::default(), &p).unwrap();
        let r = propagate(&m, &DensityMatrix::basis(2, 0), &[0.0, 1.0, 1.0], &IntegratorConfig::default());
        assert!(r.is_err());
    }
}
