//! Quantum emitter models: the driven two-level system, the biexciton
//! ladder and their sensor-extended versions.
//!
//! All rates and frequencies are in units of the exciton decay rate `γσ`,
//! times in units of `1/γσ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{cr, Real, C};

/// Gaussian drive envelope of area `area` and length `length`, centred at
/// `offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPulse<T: Real> {
    pub area: T,
    pub length: T,
    pub offset: T,
}

impl<T: Real> GaussianPulse<T> {
    /// Pulse with the default offset `t₀ = 4τ`.
    pub fn new(area: T, length: T) -> Result<Self> {
        Self::with_offset(area, length, T::lit(4.0) * length)
    }

    pub fn with_offset(area: T, length: T, offset: T) -> Result<Self> {
        let p = Self { area, length, offset };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > T::zero()) || !self.length.is_finite() {
            return Err(Error::InvalidParameter(format!("pulse length must be > 0, got {}", self.length)));
        }
        if !(self.area >= T::zero()) || !self.area.is_finite() {
            return Err(Error::InvalidParameter(format!("pulse area must be >= 0, got {}", self.area)));
        }
        if !self.offset.is_finite() {
            return Err(Error::InvalidParameter("pulse offset must be finite".into()));
        }
        Ok(())
    }

    /// `Θ/(√(2π)τ) · exp(−(t−t₀)²/(2τ²))`.
    pub fn amplitude(&self, t: T) -> T {
        let x = (t - self.offset) / self.length;
        let norm = self.area / ((T::lit(2.0) * T::PI()).sqrt() * self.length);
        norm * (-(x * x) / T::lit(2.0)).exp()
    }

    pub fn peak(&self) -> T {
        self.amplitude(self.offset)
    }

    /// Interval `[t₀ − kτ, t₀ + kτ]`.
    pub fn window(&self, k: T) -> (T, T) {
        (self.offset - k * self.length, self.offset + k * self.length)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoLevelConfig<T: Real> {
    pub decay_rate: T,
    pub detuning: T,
}

impl<T: Real> Default for TwoLevelConfig<T> {
    fn default() -> Self {
        Self { decay_rate: T::one(), detuning: T::zero() }
    }
}

impl<T: Real> TwoLevelConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay_rate > T::zero()) {
            return Err(Error::InvalidParameter(format!("decay_rate must be > 0, got {}", self.decay_rate)));
        }
        if !self.detuning.is_finite() {
            return Err(Error::InvalidParameter("detuning must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiexcitonConfig<T: Real> {
    pub decay_rate: T,
    pub binding_energy: T,
    pub exciton_detuning: T,
}

impl<T: Real> BiexcitonConfig<T> {
    /// Laser tuned to the two-photon resonance: the biexciton level sits at
    /// zero in the rotating frame, so `2Δ_X = E_b` and the exciton–cgs line
    /// appears at `+E_b/2`.
    pub fn two_photon_resonant(decay_rate: T, binding_energy: T) -> Self {
        Self { decay_rate, binding_energy, exciton_detuning: binding_energy / T::lit(2.0) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay_rate > T::zero()) {
            return Err(Error::InvalidParameter(format!("decay_rate must be > 0, got {}", self.decay_rate)));
        }
        if !self.binding_energy.is_finite() || !self.exciton_detuning.is_finite() {
            return Err(Error::InvalidParameter("binding energy and detuning must be finite".into()));
        }
        Ok(())
    }

    pub fn is_two_photon_resonant(&self) -> bool {
        let tol = T::lit(1e-12) * (T::one() + self.binding_energy.abs());
        (T::lit(2.0) * self.exciton_detuning - self.binding_energy).abs() <= tol
    }
}

impl<T: Real> Default for BiexcitonConfig<T> {
    fn default() -> Self {
        Self::two_photon_resonant(T::one(), T::lit(300.0))
    }
}

/// Fully polarized input field `(cos θ, sin θ · e^{iφ})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarizationState<T: Real> {
    pub theta: T,
    pub phi: T,
}

impl<T: Real> PolarizationState<T> {
    pub fn horizontal() -> Self {
        Self { theta: T::zero(), phi: T::zero() }
    }

    pub fn vertical() -> Self {
        Self { theta: T::FRAC_PI_2(), phi: T::zero() }
    }

    pub fn validate(&self) -> Result<()> {
        let two_pi = T::lit(2.0) * T::PI();
        if !(self.theta >= T::zero() && self.theta < T::PI()) {
            return Err(Error::InvalidParameter(format!("theta must lie in [0, π), got {}", self.theta)));
        }
        if !(self.phi >= T::zero() && self.phi < two_pi) {
            return Err(Error::InvalidParameter(format!("phi must lie in [0, 2π), got {}", self.phi)));
        }
        Ok(())
    }

    pub fn vector(&self) -> [C<T>; 2] {
        [cr(self.theta.cos()), C::from_polar(self.theta.sin(), self.phi)]
    }
}

/// Projection of the input polarization onto the H and V axes,
/// `(û*·v̂_H, û*·v̂_V)`.
pub fn project_polarization<T: Real>(input: &PolarizationState<T>) -> (C<T>, C<T>) {
    let [h, v] = input.vector();
    (h.conj(), v.conj())
}

/// Complex weights on the ladder transitions `(σ₂₁, σ₄₂, σ₃₁, σ₄₃)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationVector<T: Real> {
    pub eta: [C<T>; 4],
}

impl<T: Real> ObservationVector<T> {
    pub fn new(eta: [C<T>; 4]) -> Result<Self> {
        if eta.iter().all(|z| z.norm() == T::zero()) {
            return Err(Error::InvalidParameter("observation vector must have a nonzero component".into()));
        }
        Ok(Self { eta })
    }

    /// Only the `|X_V⟩ → |cgs⟩` transition.
    pub fn exciton_v() -> Self {
        let (o, z) = (cr(T::one()), cr(T::zero()));
        Self { eta: [z, z, o, z] }
    }

    /// `X_η = Σ η_k σ_k` on the bare ladder.
    pub fn operator(&self) -> Matrix<T> {
        LADDER_TRANSITIONS
            .iter()
            .zip(self.eta.iter())
            .fold(Matrix::zeros(4, 4), |acc, (&(lo, hi), &w)| &acc + &Matrix::outer(4, lo, hi).scale(w))
    }
}

/// Sensor mode used to compute frequency-filtered correlations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig<T: Real> {
    pub detuning: T,
    pub bandwidth: T,
    pub coupling: T,
    pub truncation: usize,
}

impl<T: Real> SensorConfig<T> {
    pub const DEFAULT_COUPLING: f64 = 1e-3;

    pub fn new(detuning: T, bandwidth: T) -> Self {
        Self { detuning, bandwidth, coupling: T::lit(Self::DEFAULT_COUPLING), truncation: 2 }
    }

    pub fn with_coupling(self, coupling: T) -> Self {
        Self { coupling, ..self }
    }

    pub fn with_truncation(self, truncation: usize) -> Self {
        Self { truncation, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > T::zero()) {
            return Err(Error::InvalidParameter(format!("sensor bandwidth must be > 0, got {}", self.bandwidth)));
        }
        if !(self.coupling > T::zero()) {
            return Err(Error::InvalidParameter(format!("sensor coupling must be > 0, got {}", self.coupling)));
        }
        if self.truncation < 2 {
            return Err(Error::InvalidParameter(format!(
                "sensor truncation must be >= 2, got {}",
                self.truncation
            )));
        }
        if !self.detuning.is_finite() {
            return Err(Error::InvalidParameter("sensor detuning must be finite".into()));
        }
        Ok(())
    }

    /// `Γ/(2ε)`, the amplitude rescaling of sensor correlators.
    pub fn prefactor(&self) -> T {
        self.bandwidth / (T::lit(2.0) * self.coupling)
    }
}

/// Time-dependent Hamiltonian term `envelope(t) · operator`.
#[derive(Clone, Debug)]
pub struct Drive<T: Real> {
    pub envelope: GaussianPulse<T>,
    pub operator: Matrix<T>,
}

/// Lindblad channel `(rate/2)(2cρc† − c†cρ − ρc†c)`.
#[derive(Clone, Debug)]
pub struct Channel<T: Real> {
    pub label: String,
    pub operator: Matrix<T>,
    pub rate: T,
}

/// A finite-dimensional open system ready for propagation.
#[derive(Clone, Debug)]
pub struct SystemModel<T: Real> {
    dim: usize,
    static_hamiltonian: Matrix<T>,
    drives: Vec<Drive<T>>,
    channels: Vec<Channel<T>>,
    labels: Vec<String>,
    output_ops: Vec<(String, Matrix<T>)>,
    sensor: Option<SensorConfig<T>>,
}

/// Lowering operators `(σ₂₁, σ₄₂, σ₃₁, σ₄₃)` of the ladder as (lower, upper)
/// index pairs in the basis (cgs, X_H, X_V, 2X).
const LADDER_TRANSITIONS: [(usize, usize); 4] = [(0, 1), (1, 3), (0, 2), (2, 3)];
const LADDER_NAMES: [&str; 4] = ["sigma21", "sigma42", "sigma31", "sigma43"];

impl<T: Real> SystemModel<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hamiltonian(&self, t: T) -> Matrix<T> {
        let mut h = self.static_hamiltonian.clone();
        for d in &self.drives {
            h += &d.operator.scale_real(d.envelope.amplitude(t));
        }
        h
    }

    pub fn static_hamiltonian(&self) -> &Matrix<T> {
        &self.static_hamiltonian
    }

    pub fn drives(&self) -> &[Drive<T>] {
        &self.drives
    }

    pub fn channels(&self) -> &[Channel<T>] {
        &self.channels
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn output_ops(&self) -> &[(String, Matrix<T>)] {
        &self.output_ops
    }

    pub fn output_op(&self, name: &str) -> Option<&Matrix<T>> {
        self.output_ops.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    /// Sensor annihilator, present on sensor-extended models.
    pub fn sensor_op(&self) -> Option<&Matrix<T>> {
        self.output_op("sensor")
    }

    pub fn sensor(&self) -> Option<&SensorConfig<T>> {
        self.sensor.as_ref()
    }

    /// Pulses that modulate the Hamiltonian.
    pub fn pulses(&self) -> impl Iterator<Item = &GaussianPulse<T>> {
        self.drives.iter().map(|d| &d.envelope)
    }

    /// Smallest nonzero dissipation rate; sets the relaxation horizon.
    pub fn slowest_rate(&self) -> T {
        self.channels
            .iter()
            .map(|ch| ch.rate)
            .filter(|&r| r > T::zero())
            .fold(T::infinity(), T::min)
    }

    /// Default propagation horizon `t₀ + 12/γ_slowest` over all pulses.
    pub fn default_horizon(&self) -> T {
        let end = self.pulses().map(|p| p.window(T::lit(4.0)).1).fold(T::zero(), T::max);
        let t0 = self.pulses().map(|p| p.offset).fold(T::zero(), T::max);
        (t0 + T::lit(12.0) / self.slowest_rate()).max(end)
    }

    /// Projector onto basis state `index` (with sensor in vacuum if present).
    pub fn basis_projector(&self, index: usize) -> Matrix<T> {
        Matrix::outer(self.dim, index, index)
    }

    pub fn ground_state(&self) -> Matrix<T> {
        self.basis_projector(0)
    }

    /// Largest entry of `H(t) − H(t)†`.
    pub fn hermiticity_violation(&self, t: T) -> T {
        self.hamiltonian(t).hermiticity_violation()
    }
}

/// Resonance-fluorescence model `H = Δσ†σ + (Ω(t)/2)(σ† + σ)` with decay `σ`.
pub fn build_two_level<T: Real>(config: &TwoLevelConfig<T>, pulse: &GaussianPulse<T>) -> Result<SystemModel<T>> {
    config.validate()?;
    pulse.validate()?;
    let sigma = Matrix::<T>::outer(2, 0, 1);
    let drive_op = (&sigma + &sigma.adjoint()).scale_real(T::lit(0.5));
    let static_h = Matrix::from_diagonal(&[cr(T::zero()), cr(config.detuning)]);
    Ok(SystemModel {
        dim: 2,
        static_hamiltonian: static_h,
        drives: vec![Drive { envelope: *pulse, operator: drive_op }],
        channels: vec![Channel { label: "sigma".into(), operator: sigma.clone(), rate: config.decay_rate }],
        labels: vec!["g".into(), "e".into()],
        output_ops: vec![("sigma".into(), sigma)],
        sensor: None,
    })
}

/// Biexciton ladder in the basis (cgs, X_H, X_V, 2X).
pub fn build_biexciton<T: Real>(
    config: &BiexcitonConfig<T>,
    pulse: &GaussianPulse<T>,
    pol: &PolarizationState<T>,
) -> Result<SystemModel<T>> {
    config.validate()?;
    pulse.validate()?;
    pol.validate()?;
    let dx = config.exciton_detuning;
    let diag = [cr(T::zero()), cr(dx), cr(dx), cr(T::lit(2.0) * dx - config.binding_energy)];
    let static_h = Matrix::from_diagonal(&diag);

    let lowering: Vec<Matrix<T>> = LADDER_TRANSITIONS.iter().map(|&(lo, hi)| Matrix::outer(4, lo, hi)).collect();
    let h_branch = &lowering[0] + &lowering[1];
    let v_branch = &lowering[2] + &lowering[3];
    let (hf, vf) = project_polarization(pol);
    let half = T::lit(0.5);
    let coupling = &h_branch.scale(hf) + &v_branch.scale(vf);
    let drive_op = (&coupling + &coupling.adjoint()).scale_real(half);

    let channels = LADDER_NAMES
        .iter()
        .zip(&lowering)
        .map(|(&name, op)| Channel { label: name.into(), operator: op.clone(), rate: config.decay_rate })
        .collect();
    let mut output_ops: Vec<(String, Matrix<T>)> =
        LADDER_NAMES.iter().zip(&lowering).map(|(&n, op)| (n.to_string(), op.clone())).collect();
    output_ops.push(("X".into(), h_branch));
    output_ops.push(("Y".into(), v_branch));
    Ok(SystemModel {
        dim: 4,
        static_hamiltonian: static_h,
        drives: vec![Drive { envelope: *pulse, operator: drive_op }],
        channels,
        labels: ["cgs", "XH", "XV", "2X"].iter().map(|s| s.to_string()).collect(),
        output_ops,
        sensor: None,
    })
}

/// Extends `system` by a truncated bosonic sensor mode coupled to `observed`
/// with `ε(ς†·observed + h.c.)`. Basis ordering is system-major.
pub fn attach_sensor<T: Real>(
    system: &SystemModel<T>,
    observed: &Matrix<T>,
    sensor: &SensorConfig<T>,
) -> Result<SystemModel<T>> {
    if sensor.truncation < 2 {
        return Err(Error::InvalidParameter(format!(
            "sensor truncation must be >= 2, got {}",
            sensor.truncation
        )));
    }
    if system.sensor.is_some() {
        return Err(Error::InvalidParameter("system already carries a sensor".into()));
    }
    if observed.rows() != system.dim || observed.cols() != system.dim {
        return Err(Error::DimensionMismatch { expected: system.dim, found: observed.rows() });
    }
    let levels = sensor.truncation + 1;
    let id_sys = Matrix::<T>::identity(system.dim);
    let id_s = Matrix::<T>::identity(levels);
    let mut a = Matrix::<T>::zeros(levels, levels);
    for n in 1..levels {
        a[(n - 1, n)] = cr(T::from_usize(n).expect("small integer").sqrt());
    }
    let num = &a.adjoint() * &a;
    let lift = |m: &Matrix<T>| m.kron(&id_s);
    let sensor_a = id_sys.kron(&a);

    let coupling = observed.kron(&a.adjoint());
    let mut h = lift(&system.static_hamiltonian);
    h += &id_sys.kron(&num).scale_real(sensor.detuning);
    h += &(&coupling + &coupling.adjoint()).scale_real(sensor.coupling);

    let drives = system
        .drives
        .iter()
        .map(|d| Drive { envelope: d.envelope, operator: lift(&d.operator) })
        .collect();
    let mut channels: Vec<Channel<T>> = system
        .channels
        .iter()
        .map(|ch| Channel { label: ch.label.clone(), operator: lift(&ch.operator), rate: ch.rate })
        .collect();
    channels.push(Channel { label: "sensor".into(), operator: sensor_a.clone(), rate: sensor.bandwidth });

    let labels = system
        .labels
        .iter()
        .flat_map(|l| (0..levels).map(move |n| format!("{l}|{n}")))
        .collect();
    let mut output_ops: Vec<(String, Matrix<T>)> =
        system.output_ops.iter().map(|(n, m)| (n.clone(), lift(m))).collect();
    output_ops.push(("sensor".into(), sensor_a));

    Ok(SystemModel {
        dim: system.dim * levels,
        static_hamiltonian: h,
        drives,
        channels,
        labels,
        output_ops,
        sensor: Some(*sensor),
    })
}
