//! Time-integrated, frequency-filtered photon statistics.
//!
//! Filtered quantities come from a weakly coupled sensor mode of width `Γ`:
//! `n_Γ(t) = (Γ/2ε)² ⟨ς†ς⟩(t)` and
//! `G²_Γ(t₁,t₂) = (Γ/2ε)⁴ ⟨T₋[ς†ς†] T₊[ςς]⟩`, integrated over `[0, T]²` with a
//! tensor trapezoid rule on a graded grid that is dense across the pulse.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::dynamics::{
    physicality_report, propagate_with, regression_map, trace_product_vec, CorrelationGrid, DensityMatrix,
    Liouvillian, PhysicalityReport, Trajectory,
};
use crate::error::{Error, Result};
use crate::integrator::IntegratorConfig;
use crate::linalg::Matrix;
use crate::model::{
    attach_sensor, build_biexciton, build_two_level, BiexcitonConfig, GaussianPulse, ObservationVector,
    PolarizationState, SensorConfig, SystemModel, TwoLevelConfig,
};
use crate::scalar::Real;

/// Integrated populations below this are treated as no emission.
pub const ZERO_EMISSION: f64 = 1e-12;
/// Largest relative change of g² under `ε → ε/2` accepted as converged.
pub const EPSILON_TOLERANCE: f64 = 5e-3;

/// Shape of the 1D integration grid used on both time axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Grid intervals per pulse length inside the pulse window.
    pub points_per_length: usize,
    /// Half-width of the uniformly fine window, in pulse lengths.
    pub window_lengths: f64,
    /// Growth of the spacing per unit distance from the window.
    pub grading: f64,
    /// Uniform subdivision of every interval (2 doubles the density).
    pub refinement: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { points_per_length: 6, window_lengths: 5.0, grading: 0.05, refinement: 1 }
    }
}

impl GridSpec {
    pub fn refined(self, factor: usize) -> Self {
        Self { refinement: self.refinement * factor, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points_per_length == 0 || self.refinement == 0 {
            return Err(Error::InvalidParameter("grid densities must be >= 1".into()));
        }
        if !(self.grading > 0.0 && self.window_lengths > 0.0) {
            return Err(Error::InvalidParameter("grid grading and window must be > 0".into()));
        }
        Ok(())
    }
}

/// Graded grid on `[0, horizon]`: spacing `τ/points_per_length` across
/// `t₀ ± window_lengths·τ`, growing linearly with the distance outside.
pub fn integration_grid<T: Real>(pulse: &GaussianPulse<T>, horizon: T, spec: &GridSpec) -> Result<Vec<T>> {
    spec.validate()?;
    if !(horizon > T::zero()) {
        return Err(Error::InvalidParameter("horizon must be > 0".into()));
    }
    let fine = pulse.length / T::from_usize(spec.points_per_length).expect("small integer");
    let (w0, w1) = pulse.window(T::lit(spec.window_lengths));
    let alpha = T::lit(spec.grading);
    let cap = horizon / T::lit(40.0);
    let spacing = |t: T| {
        let dist = if t < w0 {
            w0 - t
        } else if t > w1 {
            t - w1
        } else {
            T::zero()
        };
        (fine + alpha * dist).min(cap.max(fine))
    };
    let centre = pulse.offset.max(T::zero()).min(horizon);
    let mut right = vec![centre];
    let mut t = centre;
    while t < horizon {
        t = t + spacing(t);
        right.push(t.min(horizon));
        if t >= horizon {
            break;
        }
    }
    let mut left = Vec::new();
    let mut t = centre;
    while t > T::zero() {
        t = t - spacing(t);
        left.push(t.max(T::zero()));
        if t <= T::zero() {
            break;
        }
    }
    left.reverse();
    left.extend(right);
    // merge near-duplicates at the clipped ends
    let min_gap = fine * T::lit(0.25);
    let mut coarse: Vec<T> = Vec::with_capacity(left.len());
    for x in left {
        match coarse.last() {
            Some(&last) if x - last < min_gap => {
                if x == horizon || x == T::zero() {
                    *coarse.last_mut().expect("nonempty") = x;
                }
            }
            _ => coarse.push(x),
        }
    }
    let r = spec.refinement;
    if r == 1 {
        return Ok(coarse);
    }
    let rf = T::from_usize(r).expect("small integer");
    let mut out = Vec::with_capacity((coarse.len() - 1) * r + 1);
    for w in coarse.windows(2) {
        for k in 0..r {
            out.push(w[0] + (w[1] - w[0]) * T::from_usize(k).expect("small") / rf);
        }
    }
    out.push(*coarse.last().expect("nonempty"));
    Ok(out)
}

/// Composite trapezoid weights for an increasing grid.
pub fn trapezoid_weights<T: Real>(times: &[T]) -> Vec<T> {
    let n = times.len();
    let mut w = vec![T::zero(); n];
    let half = T::lit(0.5);
    for k in 0..n.saturating_sub(1) {
        let h = times[k + 1] - times[k];
        w[k] = w[k] + half * h;
        w[k + 1] = w[k + 1] + half * h;
    }
    w
}

/// How the sensor-coupling convergence check is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonCheck {
    Off,
    /// Compute the check and record it in `converged`.
    Report,
    /// Fail with [`Error::NotConverged`] when the check does not pass.
    Require,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationConfig {
    pub integrator: IntegratorConfig,
    pub grid: GridSpec,
    /// Overrides the default `t₀ + 12/γ_slowest` horizon.
    pub horizon: Option<f64>,
    pub epsilon_check: EpsilonCheck,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig::default(),
            grid: GridSpec::default(),
            horizon: None,
            epsilon_check: EpsilonCheck::Require,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FilteredStats<T: Real> {
    pub times: Vec<T>,
    pub n_of_t: Vec<T>,
    pub n_integral: T,
    pub g2_numerator: T,
    pub g2: T,
    pub epsilon_used: T,
    pub converged: bool,
    /// `|g²(ε) − g²(ε/2)| / g²(ε/2)` when the check ran.
    pub relative_change: Option<T>,
    pub physicality: PhysicalityReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct UnfilteredStats<T: Real> {
    pub n_integral: T,
    pub g2_numerator: T,
    pub g2: T,
    pub physicality: PhysicalityReport,
}

fn primary_pulse<T: Real>(system: &SystemModel<T>) -> Result<GaussianPulse<T>> {
    system
        .pulses()
        .next()
        .copied()
        .ok_or_else(|| Error::InvalidParameter("system has no drive pulse".into()))
}

fn horizon_for<T: Real>(system: &SystemModel<T>, cfg: &CorrelationConfig) -> T {
    cfg.horizon.map(T::lit).unwrap_or_else(|| system.default_horizon())
}

struct Integrated<T: Real> {
    times: Vec<T>,
    population: Vec<T>,
    population_integral: T,
    pair_integral: T,
    physicality: PhysicalityReport,
}

/// Forward run, regression map with `emit`, and both time integrals.
fn integrate_pair<T: Real>(system: &SystemModel<T>, emit: &Matrix<T>, cfg: &CorrelationConfig) -> Result<Integrated<T>> {
    let pulse = primary_pulse(system)?;
    let horizon = horizon_for(system, cfg);
    let times = integration_grid(&pulse, horizon, &cfg.grid)?;
    let liouv = Liouvillian::new(system);
    let rho0 = DensityMatrix::basis(system.dim(), 0);
    let traj = propagate_with(&liouv, system, &rho0, &times, &cfg.integrator)?;
    let physicality = physicality_report(&traj);
    let weights = trapezoid_weights(&times);
    let population = populations(&traj, emit);
    let population_integral: T = population.iter().zip(&weights).map(|(&n, &w)| n * w).sum();
    if population_integral.to_f64_lossy() < ZERO_EMISSION {
        return Ok(Integrated { times, population, population_integral, pair_integral: T::zero(), physicality });
    }
    let map = regression_map(&liouv, system, &traj, emit, &cfg.integrator)?;
    let pair_integral = map.integrate(&weights);
    Ok(Integrated { times, population, population_integral, pair_integral, physicality })
}

fn populations<T: Real>(traj: &Trajectory<T>, emit: &Matrix<T>) -> Vec<T> {
    let number = &emit.adjoint() * emit;
    let d = emit.rows();
    traj.states.iter().map(|s| trace_product_vec(&number, s.matrix().as_slice(), d)).collect()
}

/// Filtered statistics at the sensor's own coupling, without the ε check.
pub fn filtered_stats<T: Real>(
    system: &SystemModel<T>,
    observed: &Matrix<T>,
    sensor: &SensorConfig<T>,
    cfg: &CorrelationConfig,
) -> Result<FilteredStats<T>> {
    sensor.validate()?;
    let ext = attach_sensor(system, observed, sensor)?;
    let sensor_op = ext.sensor_op().expect("sensor attached").clone();
    let run = integrate_pair(&ext, &sensor_op, cfg)?;
    let k2 = sensor.prefactor().powi(2);
    let n_integral = run.population_integral * k2;
    if n_integral.to_f64_lossy() < ZERO_EMISSION {
        return Err(Error::ZeroEmission { n_integral: n_integral.to_f64_lossy() });
    }
    let g2_numerator = run.pair_integral * k2 * k2;
    Ok(FilteredStats {
        n_of_t: run.population.iter().map(|&n| n * k2).collect(),
        times: run.times,
        n_integral,
        g2_numerator,
        g2: g2_numerator / (n_integral * n_integral),
        epsilon_used: sensor.coupling,
        converged: false,
        relative_change: None,
        physicality: run.physicality,
    })
}

/// `g²[0;Γ]` of the emission `observed` of `system` through a Lorentzian
/// filter described by `sensor`, with the ε-halving check per
/// `cfg.epsilon_check`.
pub fn filtered_g2_zero<T: Real>(
    system: &SystemModel<T>,
    observed: &Matrix<T>,
    sensor: &SensorConfig<T>,
    cfg: &CorrelationConfig,
) -> Result<FilteredStats<T>> {
    let mut stats = filtered_stats(system, observed, sensor, cfg)?;
    if cfg.epsilon_check == EpsilonCheck::Off {
        return Ok(stats);
    }
    let half = sensor.with_coupling(sensor.coupling / T::lit(2.0));
    let check = filtered_stats(system, observed, &half, cfg)?;
    let rel = ((stats.g2 - check.g2) / check.g2).abs();
    stats.relative_change = Some(rel);
    stats.converged = rel.to_f64_lossy() < EPSILON_TOLERANCE;
    stats.physicality = stats.physicality.merge(check.physicality);
    if !stats.converged && cfg.epsilon_check == EpsilonCheck::Require {
        return Err(Error::NotConverged { relative_change: rel.to_f64_lossy(), g2: stats.g2.to_f64_lossy() });
    }
    Ok(stats)
}

/// Unfiltered statistics of `emit` from the bare emitter.
pub fn unfiltered_stats<T: Real>(
    system: &SystemModel<T>,
    emit: &Matrix<T>,
    cfg: &CorrelationConfig,
) -> Result<UnfilteredStats<T>> {
    let run = integrate_pair(system, emit, cfg)?;
    if run.population_integral.to_f64_lossy() < ZERO_EMISSION {
        return Err(Error::ZeroEmission { n_integral: run.population_integral.to_f64_lossy() });
    }
    Ok(UnfilteredStats {
        n_integral: run.population_integral,
        g2_numerator: run.pair_integral,
        g2: run.pair_integral / (run.population_integral * run.population_integral),
        physicality: run.physicality,
    })
}

/// `g²[0]` of `emit` without a filter.
pub fn unfiltered_g2_zero<T: Real>(system: &SystemModel<T>, emit: &Matrix<T>, cfg: &CorrelationConfig) -> Result<T> {
    unfiltered_stats(system, emit, cfg).map(|s| s.g2)
}

/// Integrated filtered intensity only (no regression map).
pub fn filtered_intensity<T: Real>(
    system: &SystemModel<T>,
    observed: &Matrix<T>,
    sensor: &SensorConfig<T>,
    cfg: &CorrelationConfig,
) -> Result<(T, PhysicalityReport)> {
    sensor.validate()?;
    let ext = attach_sensor(system, observed, sensor)?;
    let pulse = primary_pulse(&ext)?;
    let times = integration_grid(&pulse, horizon_for(&ext, cfg), &cfg.grid)?;
    let liouv = Liouvillian::new(&ext);
    let traj = propagate_with(&liouv, &ext, &DensityMatrix::basis(ext.dim(), 0), &times, &cfg.integrator)?;
    let pop = populations(&traj, ext.sensor_op().expect("sensor attached"));
    let w = trapezoid_weights(&times);
    let integral: T = pop.iter().zip(&w).map(|(&n, &w)| n * w).sum();
    Ok((integral * sensor.prefactor().powi(2), physicality_report(&traj)))
}

/// What a [`SweepResult`] holds on its value axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    G2,
    Spectrum,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult<T: Real> {
    pub kind: SweepKind,
    pub axis_name: String,
    pub axis: Vec<T>,
    pub values: Vec<T>,
    pub epsilon_used: Vec<T>,
    pub converged: Vec<bool>,
    pub physicality: PhysicalityReport,
    pub metadata: Map<String, Value>,
}

impl<T: Real> SweepResult<T> {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }

    /// Value at the axis point closest to `x`.
    pub fn value_near(&self, x: T) -> Option<T> {
        self.axis
            .iter()
            .zip(&self.values)
            .min_by(|a, b| (*a.0 - x).abs().partial_cmp(&(*b.0 - x).abs()).expect("finite axis"))
            .map(|(_, &v)| v)
    }

    pub fn argmin(&self) -> Option<(T, T)> {
        self.axis
            .iter()
            .zip(&self.values)
            .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite values"))
            .map(|(&a, &v)| (a, v))
    }

    /// `axis_value,g2,epsilon_used,converged` or
    /// `detuning_over_gamma,normalized_intensity`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        match self.kind {
            SweepKind::G2 => {
                writeln!(out, "axis_value,g2,epsilon_used,converged")?;
                for i in 0..self.axis.len() {
                    writeln!(
                        out,
                        "{},{:e},{:e},{}",
                        self.axis[i], self.values[i], self.epsilon_used[i], self.converged[i]
                    )?;
                }
            }
            SweepKind::Spectrum => {
                writeln!(out, "detuning_over_gamma,normalized_intensity")?;
                for i in 0..self.axis.len() {
                    writeln!(out, "{},{:e}", self.axis[i], self.values[i])?;
                }
            }
        }
        Ok(())
    }
}

fn check_axis<T: Real>(axis: &[T], what: &str) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::InvalidParameter(format!("{what} grid is empty")));
    }
    if axis.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter(format!("{what} grid must be strictly increasing")));
    }
    Ok(())
}

/// Time-integrated filtered intensity versus sensor detuning, normalized
/// to its maximum. `template` supplies the filter width and coupling.
pub fn spectrum<T: Real>(
    system: &SystemModel<T>,
    observed: &Matrix<T>,
    detunings: &[T],
    template: &SensorConfig<T>,
    cfg: &CorrelationConfig,
) -> Result<SweepResult<T>> {
    check_axis(detunings, "detuning")?;
    let raw: Vec<(T, PhysicalityReport)> = detunings
        .par_iter()
        .enumerate()
        .map(|(i, &d)| {
            let sensor = SensorConfig { detuning: d, ..*template };
            filtered_intensity(system, observed, &sensor, cfg).map_err(|e| Error::SweepPoint {
                index: i,
                axis: "detuning",
                value: d.to_f64_lossy(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let peak = raw.iter().map(|r| r.0).fold(T::zero(), T::max);
    if peak.to_f64_lossy() < ZERO_EMISSION {
        return Err(Error::ZeroEmission { n_integral: peak.to_f64_lossy() });
    }
    let physicality = raw.iter().map(|r| r.1).reduce(PhysicalityReport::merge).expect("nonempty");
    let mut metadata = Map::new();
    metadata.insert("filter_width".into(), json!(template.bandwidth.to_f64_lossy()));
    metadata.insert("coupling".into(), json!(template.coupling.to_f64_lossy()));
    metadata.insert("peak_intensity".into(), json!(peak.to_f64_lossy()));
    Ok(SweepResult {
        kind: SweepKind::Spectrum,
        axis_name: "detuning".into(),
        axis: detunings.to_vec(),
        values: raw.iter().map(|r| r.0 / peak).collect(),
        epsilon_used: vec![template.coupling; detunings.len()],
        converged: vec![true; detunings.len()],
        physicality,
        metadata,
    })
}

/// Builds the emitter for a given pulse and names the observed emission.
pub trait EmitterBuilder<T: Real>: Sync {
    fn build(&self, pulse: &GaussianPulse<T>) -> Result<SystemModel<T>>;
    /// Operator the sensor observes.
    fn observed(&self, system: &SystemModel<T>) -> Result<Matrix<T>>;
    /// Sensor detuning centred on the observed line.
    fn line_detuning(&self) -> T;
    fn describe(&self) -> Value;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TwoLevelEmitter<T: Real> {
    pub config: TwoLevelConfig<T>,
}

impl<T: Real> EmitterBuilder<T> for TwoLevelEmitter<T> {
    fn build(&self, pulse: &GaussianPulse<T>) -> Result<SystemModel<T>> {
        build_two_level(&self.config, pulse)
    }

    fn observed(&self, system: &SystemModel<T>) -> Result<Matrix<T>> {
        system
            .output_op("sigma")
            .cloned()
            .ok_or_else(|| Error::InvalidParameter("two-level model lacks sigma".into()))
    }

    fn line_detuning(&self) -> T {
        self.config.detuning
    }

    fn describe(&self) -> Value {
        json!({
            "system": "two_level",
            "decay_rate": self.config.decay_rate.to_f64_lossy(),
            "detuning": self.config.detuning.to_f64_lossy(),
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LadderEmitter<T: Real> {
    pub config: BiexcitonConfig<T>,
    pub polarization: PolarizationState<T>,
    pub eta: ObservationVector<T>,
}

impl<T: Real> Default for LadderEmitter<T> {
    /// The exciton–cgs configuration: H drive, `η = (0,0,1,0)`.
    fn default() -> Self {
        Self {
            config: BiexcitonConfig::default(),
            polarization: PolarizationState::horizontal(),
            eta: ObservationVector::exciton_v(),
        }
    }
}

impl<T: Real> EmitterBuilder<T> for LadderEmitter<T> {
    fn build(&self, pulse: &GaussianPulse<T>) -> Result<SystemModel<T>> {
        build_biexciton(&self.config, pulse, &self.polarization)
    }

    fn observed(&self, _system: &SystemModel<T>) -> Result<Matrix<T>> {
        Ok(self.eta.operator())
    }

    fn line_detuning(&self) -> T {
        self.config.exciton_detuning
    }

    fn describe(&self) -> Value {
        json!({
            "system": "biexciton",
            "decay_rate": self.config.decay_rate.to_f64_lossy(),
            "binding_energy": self.config.binding_energy.to_f64_lossy(),
            "exciton_detuning": self.config.exciton_detuning.to_f64_lossy(),
            "polarization": [self.polarization.theta.to_f64_lossy(), self.polarization.phi.to_f64_lossy()],
            "eta": self.eta.eta.iter().map(|z| [z.re.to_f64_lossy(), z.im.to_f64_lossy()]).collect::<Vec<_>>(),
        })
    }
}

/// Biexciton population right after a pulse of the given area.
pub fn biexciton_preparation<T: Real>(
    config: &BiexcitonConfig<T>,
    polarization: &PolarizationState<T>,
    area: T,
    tau: T,
    integrator: &IntegratorConfig,
) -> Result<T> {
    let pulse = GaussianPulse::new(area, tau)?;
    let system = build_biexciton(config, &pulse, polarization)?;
    let (_, end) = pulse.window(T::lit(4.0));
    let traj = crate::dynamics::propagate(&system, &DensityMatrix::basis(4, 0), &[T::zero(), end], integrator)?;
    Ok(traj.states[1].population(3))
}

/// Two-photon π area: the pulse area in `[π/4, 4π]` that maximizes the
/// biexciton population at the end of a pulse of length `tau`.
pub fn two_photon_pi_area<T: Real>(
    config: &BiexcitonConfig<T>,
    polarization: &PolarizationState<T>,
    tau: T,
    integrator: &IntegratorConfig,
) -> Result<T> {
    let f = |a: T| biexciton_preparation(config, polarization, a, tau, integrator);
    let pi = T::PI();
    let coarse: Vec<T> = (1..=16).map(|k| pi * T::lit(0.25 * k as f64)).collect();
    let pops = coarse.iter().map(|&a| f(a)).collect::<Result<Vec<T>>>()?;
    let best = (0..pops.len()).max_by(|&i, &j| pops[i].partial_cmp(&pops[j]).expect("finite population")).unwrap();
    let mut lo = coarse[best.saturating_sub(1)];
    let mut hi = coarse[(best + 1).min(coarse.len() - 1)];
    let ratio = (T::lit(5.0).sqrt() - T::one()) / T::lit(2.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    while hi - lo > T::lit(1e-4) * pi {
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2)?;
        }
    }
    Ok((lo + hi) / T::lit(2.0))
}

/// One filtered g² job on a (τ, Γ) pair.
fn g2_job<T: Real, B: EmitterBuilder<T>>(
    builder: &B,
    area: T,
    tau: T,
    gamma: T,
    template: &SensorConfig<T>,
    cfg: &CorrelationConfig,
) -> Result<FilteredStats<T>> {
    let pulse = GaussianPulse::new(area, tau)?;
    let system = builder.build(&pulse)?;
    let observed = builder.observed(&system)?;
    let sensor = SensorConfig { bandwidth: gamma, ..*template };
    filtered_g2_zero(&system, &observed, &sensor, cfg)
}

fn collect_sweep<T: Real>(
    axis_name: &str,
    axis: &[T],
    stats: Vec<FilteredStats<T>>,
    mut metadata: Map<String, Value>,
    cfg: &CorrelationConfig,
) -> SweepResult<T> {
    metadata.insert("integrator".into(), serde_json::to_value(cfg).unwrap_or(Value::Null));
    SweepResult {
        kind: SweepKind::G2,
        axis_name: axis_name.into(),
        axis: axis.to_vec(),
        values: stats.iter().map(|s| s.g2).collect(),
        epsilon_used: stats.iter().map(|s| s.epsilon_used).collect(),
        converged: stats.iter().map(|s| s.converged || cfg.epsilon_check == EpsilonCheck::Off).collect(),
        physicality: stats.iter().map(|s| s.physicality).reduce(PhysicalityReport::merge).expect("nonempty"),
        metadata,
    }
}

/// `g²[0;Γ]` versus pulse length, one curve per filter width. The sensor
/// sits on the builder's emission line unless `template` says otherwise.
pub fn sweep_pulse_length<T: Real, B: EmitterBuilder<T>>(
    builder: &B,
    taus: &[T],
    widths: &[T],
    area: T,
    template: &SensorConfig<T>,
    cfg: &CorrelationConfig,
) -> Result<Vec<SweepResult<T>>> {
    check_axis(taus, "pulse length")?;
    let jobs: Vec<(usize, usize)> = (0..widths.len()).flat_map(|w| (0..taus.len()).map(move |t| (w, t))).collect();
    let stats: Vec<FilteredStats<T>> = jobs
        .par_iter()
        .map(|&(w, t)| {
            g2_job(builder, area, taus[t], widths[w], template, cfg).map_err(|e| Error::SweepPoint {
                index: t,
                axis: "pulse_length",
                value: taus[t].to_f64_lossy(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let mut stats = stats.into_iter();
    Ok(widths
        .iter()
        .map(|&gamma| {
            let curve: Vec<_> = stats.by_ref().take(taus.len()).collect();
            let mut meta = Map::new();
            meta.insert("emitter".into(), builder.describe());
            meta.insert("filter_width".into(), json!(gamma.to_f64_lossy()));
            meta.insert("pulse_area".into(), json!(area.to_f64_lossy()));
            meta.insert("sensor_detuning".into(), json!(template.detuning.to_f64_lossy()));
            collect_sweep("pulse_length", taus, curve, meta, cfg)
        })
        .collect())
}

/// `g²[0;Γ]` versus filter width, one curve per pulse length.
pub fn sweep_filter_width<T: Real, B: EmitterBuilder<T>>(
    builder: &B,
    gammas: &[T],
    taus: &[T],
    area: T,
    template: &SensorConfig<T>,
    cfg: &CorrelationConfig,
) -> Result<Vec<SweepResult<T>>> {
    check_axis(gammas, "filter width")?;
    let jobs: Vec<(usize, usize)> = (0..taus.len()).flat_map(|t| (0..gammas.len()).map(move |g| (t, g))).collect();
    let stats: Vec<FilteredStats<T>> = jobs
        .par_iter()
        .map(|&(t, g)| {
            g2_job(builder, area, taus[t], gammas[g], template, cfg).map_err(|e| Error::SweepPoint {
                index: g,
                axis: "filter_width",
                value: gammas[g].to_f64_lossy(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let mut stats = stats.into_iter();
    Ok(taus
        .iter()
        .map(|&tau| {
            let curve: Vec<_> = stats.by_ref().take(gammas.len()).collect();
            let mut meta = Map::new();
            meta.insert("emitter".into(), builder.describe());
            meta.insert("pulse_length".into(), json!(tau.to_f64_lossy()));
            meta.insert("pulse_area".into(), json!(area.to_f64_lossy()));
            meta.insert("sensor_detuning".into(), json!(template.detuning.to_f64_lossy()));
            collect_sweep("filter_width", gammas, curve, meta, cfg)
        })
        .collect())
}

/// Logarithmically spaced grid with `points` values from `lo` to `hi`.
pub fn log_grid<T: Real>(lo: T, hi: T, points: usize) -> Vec<T> {
    if points < 2 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let n = T::from_usize(points - 1).expect("small integer");
    (0..points).map(|k| (a + (b - a) * T::from_usize(k).expect("small") / n).exp()).collect()
}

/// Linearly spaced grid with `points` values from `lo` to `hi`.
pub fn linear_grid<T: Real>(lo: T, hi: T, points: usize) -> Vec<T> {
    if points < 2 {
        return vec![lo];
    }
    let n = T::from_usize(points - 1).expect("small integer");
    (0..points).map(|k| lo + (hi - lo) * T::from_usize(k).expect("small") / n).collect()
}

/// Regression map of the bare emitter output on the integration grid.
pub fn emitter_g2_map<T: Real>(
    system: &SystemModel<T>,
    emit: &Matrix<T>,
    cfg: &CorrelationConfig,
) -> Result<CorrelationGrid<T>> {
    let pulse = primary_pulse(system)?;
    let times = integration_grid(&pulse, horizon_for(system, cfg), &cfg.grid)?;
    Ok(crate::dynamics::two_time_g2_map(system, emit, &times, &cfg.integrator)?.map)
}
