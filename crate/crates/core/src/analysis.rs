//! Cascade lifetime models, IRF convolution, Poisson-weighted lifetime fits
//! and the super-Gaussian filter transmission.
//!
//! Times are in ns and rates in 1/ns unless a name says otherwise.

use std::io::BufRead;

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt, TerminationReason};
use nalgebra::{storage::Owned, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative rate gap below which the cascade uses its degenerate limit.
pub const DEGENERATE_RATES: f64 = 1e-9;

/// `(n_2X, n_X)` after a biexciton preparation at `t = 0`.
pub fn cascade_populations<T: Real>(gamma_2x: T, gamma_x: T, t: T) -> (T, T) {
    let n2 = (-gamma_2x * t).exp();
    let delta = gamma_2x - gamma_x;
    let nx = if delta.abs() < T::lit(DEGENERATE_RATES) * gamma_x.abs() {
        gamma_2x * t * n2
    } else {
        gamma_2x * n2 * (delta * t).exp_m1() / delta
    };
    (n2, nx)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeParams {
    pub gamma_2x: f64,
    pub gamma_x: f64,
    pub irf_sigma: f64,
    pub amplitude: f64,
    pub offset: f64,
}

impl CascadeParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma_2x", self.gamma_2x), ("gamma_x", self.gamma_x), ("irf_sigma", self.irf_sigma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if !self.amplitude.is_finite() || !self.offset.is_finite() {
            return Err(Error::InvalidParameter("amplitude and offset must be finite".into()));
        }
        Ok(())
    }

    /// Lifetimes `(τ_2X, τ_X)` in ns.
    pub fn lifetimes(&self) -> (f64, f64) {
        (1.0 / self.gamma_2x, 1.0 / self.gamma_x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Monoexponential biexciton decay.
    Biexciton,
    /// Exciton buildup and decay.
    Exciton,
}

/// Uniform-grid convolution with a normalized Gaussian of width
/// `irf_sigma`. Widths below half a grid step act as the identity.
pub fn convolve_irf<T: Real>(curve: &[T], step: T, irf_sigma: T) -> Result<Vec<T>> {
    if !(step > T::zero()) || !(irf_sigma >= T::zero()) {
        return Err(Error::InvalidParameter(format!("step must be > 0 and irf_sigma >= 0, got {step}, {irf_sigma}")));
    }
    if irf_sigma < step / T::lit(2.0) {
        return Ok(curve.to_vec());
    }
    if step > irf_sigma / T::lit(5.0) {
        return Err(Error::GridTooCoarse { step: step.to_f64_lossy(), irf_sigma: irf_sigma.to_f64_lossy() });
    }
    let half = (T::lit(8.0) * irf_sigma / step).ceil().to_usize().expect("finite kernel");
    let mut kernel: Vec<T> = (0..=2 * half)
        .map(|k| {
            let x = T::from_usize(k).unwrap() * step - T::from_usize(half).unwrap() * step;
            (-(x * x) / (T::lit(2.0) * irf_sigma * irf_sigma)).exp()
        })
        .collect();
    let norm: T = kernel.iter().copied().sum();
    kernel.iter_mut().for_each(|g| *g = *g / norm);
    let n = curve.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            (lo..=hi).map(|j| curve[j] * kernel[j + half - i]).sum()
        })
        .collect())
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `Φ(−x)/φ(x)` for large `x`.
fn mills_ratio_asymptotic(x: f64) -> f64 {
    let x2 = x * x;
    (1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2) + 105.0 / (x2 * x2 * x2 * x2)) / x
}

/// `θ(t)·e^{−γt}` convolved with a unit-area Gaussian of width `sigma`.
pub fn exp_gaussian(gamma: f64, sigma: f64, t: f64) -> f64 {
    let z = (t - gamma * sigma * sigma) / sigma;
    if z >= -30.0 {
        let a = 0.5 * gamma * gamma * sigma * sigma - gamma * t;
        let phi = 0.5 * erfc(-z / std::f64::consts::SQRT_2);
        if phi == 0.0 {
            0.0
        } else {
            (a + phi.ln()).exp()
        }
    } else {
        (-0.5 * t * t / (sigma * sigma)).exp() / (2.0 * std::f64::consts::PI).sqrt() * mills_ratio_asymptotic(-z)
    }
}

/// `θ(t)·t·e^{−γt}` convolved with a unit-area Gaussian of width `sigma`.
fn t_exp_gaussian(gamma: f64, sigma: f64, t: f64) -> f64 {
    let u = t - gamma * sigma * sigma;
    u * exp_gaussian(gamma, sigma, t) + sigma * std_normal_pdf(t / sigma)
}

/// Analytic IRF-convolved population of `branch` at delay `t − offset`,
/// scaled by the amplitude.
pub fn convolved_model(p: &CascadeParams, branch: Branch, t: f64) -> f64 {
    let (g2, gx, s) = (p.gamma_2x.abs(), p.gamma_x.abs(), p.irf_sigma.abs());
    let t = t - p.offset;
    let shape = match branch {
        Branch::Biexciton => exp_gaussian(g2, s, t),
        Branch::Exciton => {
            let delta = gx - g2;
            if delta.abs() < 1e-6 * gx {
                g2 * t_exp_gaussian(0.5 * (g2 + gx), s, t)
            } else {
                g2 / delta * (exp_gaussian(g2, s, t) - exp_gaussian(gx, s, t))
            }
        }
    };
    p.amplitude * shape
}

/// Exact cell average of the unconvolved population over `[a, b]`.
fn cell_average(p: &CascadeParams, branch: Branch, a: f64, b: f64) -> f64 {
    let (a, b) = ((a - p.offset).max(0.0), (b - p.offset).max(0.0));
    let w = b - a;
    if w <= 0.0 {
        return 0.0;
    }
    let int_exp = |g: f64| ((-g * a).exp() - (-g * b).exp()) / g;
    let area = match branch {
        Branch::Biexciton => int_exp(p.gamma_2x),
        Branch::Exciton => {
            let delta = p.gamma_x - p.gamma_2x;
            p.gamma_2x / delta * (int_exp(p.gamma_2x) - int_exp(p.gamma_x))
        }
    };
    area / w
}

/// Synthetic histogram on the uniform grid `times`: the population is
/// cell-averaged on a fine grid, convolved numerically, scaled so the
/// noiseless peak equals `peak_counts`, then Poisson-sampled when a seed is
/// given. Returns the counts and the model amplitude that reproduces them.
pub fn synthetic_decay(
    p: &CascadeParams,
    branch: Branch,
    times: &[f64],
    peak_counts: f64,
    seed: Option<u64>,
) -> Result<(Vec<f64>, f64)> {
    p.validate()?;
    if times.len() < 2 {
        return Err(Error::InvalidParameter("need at least two time points".into()));
    }
    let step = times[1] - times[0];
    let over = ((20.0 * step / p.irf_sigma).ceil() as usize).max(1);
    let fine = step / over as f64;
    let pad = (10.0 * p.irf_sigma / fine).ceil() as usize;
    let n_fine = (times.len() - 1) * over + 1 + 2 * pad;
    let t_fine = |k: usize| times[0] + (k as f64 - pad as f64) * fine;
    let raw: Vec<f64> = (0..n_fine)
        .map(|k| cell_average(p, branch, t_fine(k) - 0.5 * fine, t_fine(k) + 0.5 * fine))
        .collect();
    let conv = convolve_irf(&raw, fine, p.irf_sigma)?;
    let shape: Vec<f64> = (0..times.len()).map(|i| conv[pad + i * over]).collect();
    let peak = shape.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::InvalidParameter("synthetic curve is identically zero on the grid".into()));
    }
    let amplitude = peak_counts / peak;
    let mut counts: Vec<f64> = shape.iter().map(|s| s * amplitude).collect();
    if let Some(seed) = seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in counts.iter_mut() {
            *c = if *c > 0.0 { Poisson::new(*c).map(|d| d.sample(&mut rng)).unwrap_or(0.0) } else { 0.0 };
        }
    }
    Ok((counts, amplitude))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Jacobian central-difference step relative to each parameter.
    pub relative_step: f64,
    /// Residual evaluations allowed per parameter.
    pub patience: usize,
    pub tolerance: f64,
    /// Refits with weights from the fitted model instead of the data.
    pub reweight_rounds: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { relative_step: 1e-6, patience: 200, tolerance: 1e-12, reweight_rounds: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifetimeFit {
    pub branch: Branch,
    pub params: CascadeParams,
    /// Parameter order: `gamma_2x, [gamma_x,] irf_sigma, amplitude, offset`.
    pub covariance: Vec<Vec<f64>>,
    pub sigma: CascadeParams,
    pub chi2: f64,
    pub chi2_reduced: f64,
    pub evaluations: usize,
}

impl LifetimeFit {
    /// 1σ errors of `(τ_2X, τ_X)` in ns.
    pub fn lifetime_sigmas(&self) -> (f64, f64) {
        (self.sigma.gamma_2x / self.params.gamma_2x.powi(2), self.sigma.gamma_x / self.params.gamma_x.powi(2))
    }

    pub fn to_json(&self) -> Value {
        let (t2, tx) = self.params.lifetimes();
        let (s2, sx) = self.lifetime_sigmas();
        let exciton = self.branch == Branch::Exciton;
        json!({
            "branch": self.branch,
            "tau_2x_ps": t2 * 1e3,
            "tau_x_ps": if exciton { json!(tx * 1e3) } else { Value::Null },
            "irf_sigma_ps": self.params.irf_sigma * 1e3,
            "amplitude": self.params.amplitude,
            "offset_ps": self.params.offset * 1e3,
            "uncertainties": {
                "tau_2x_ps": s2 * 1e3,
                "tau_x_ps": if exciton { json!(sx * 1e3) } else { Value::Null },
                "irf_sigma_ps": self.sigma.irf_sigma * 1e3,
                "amplitude": self.sigma.amplitude,
                "offset_ps": self.sigma.offset * 1e3,
            },
            "chi2_reduced": self.chi2_reduced,
        })
    }
}

fn pack(p: &CascadeParams, branch: Branch) -> Vec<f64> {
    match branch {
        Branch::Biexciton => vec![p.gamma_2x, p.irf_sigma, p.amplitude, p.offset],
        Branch::Exciton => vec![p.gamma_2x, p.gamma_x, p.irf_sigma, p.amplitude, p.offset],
    }
}

fn unpack(x: &[f64], branch: Branch, template: &CascadeParams) -> CascadeParams {
    match branch {
        Branch::Biexciton => CascadeParams {
            gamma_2x: x[0],
            gamma_x: template.gamma_x,
            irf_sigma: x[1],
            amplitude: x[2],
            offset: x[3],
        },
        Branch::Exciton => CascadeParams { gamma_2x: x[0], gamma_x: x[1], irf_sigma: x[2], amplitude: x[3], offset: x[4] },
    }
}

struct DecayProblem<'a> {
    t: &'a [f64],
    y: &'a [f64],
    sqrt_w: Vec<f64>,
    branch: Branch,
    template: CascadeParams,
    x: DVector<f64>,
    relative_step: f64,
}

impl DecayProblem<'_> {
    fn residuals_at(&self, x: &[f64]) -> DVector<f64> {
        let p = unpack(x, self.branch, &self.template);
        DVector::from_iterator(
            self.t.len(),
            self.t.iter().zip(self.y).zip(&self.sqrt_w).map(|((t, y), w)| w * (convolved_model(&p, self.branch, *t) - y)),
        )
    }
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for DecayProblem<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.x.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.x.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let r = self.residuals_at(self.x.as_slice());
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let n = self.x.len();
        let mut jac = DMatrix::zeros(self.t.len(), n);
        let mut x = self.x.as_slice().to_vec();
        for j in 0..n {
            let h = self.relative_step * self.x[j].abs().max(1e-12);
            x[j] = self.x[j] + h;
            let plus = self.residuals_at(&x);
            x[j] = self.x[j] - h;
            let minus = self.residuals_at(&x);
            x[j] = self.x[j];
            jac.set_column(j, &((plus - minus) / (2.0 * h)));
        }
        jac.iter().all(|v| v.is_finite()).then_some(jac)
    }
}

/// Poisson-weighted least squares of the analytic IRF-convolved cascade
/// model. `data` holds `(t_ns, counts)`. The first pass weights by
/// `1/max(counts, 1)`; later passes weight by the fitted model, which
/// converges to the Poisson maximum-likelihood estimate.
pub fn fit_lifetimes(data: &[(f64, f64)], init: &CascadeParams, branch: Branch, cfg: &FitConfig) -> Result<LifetimeFit> {
    init.validate()?;
    if data.len() < 50 {
        return Err(Error::InvalidParameter(format!("need at least 50 data points, got {}", data.len())));
    }
    let t: Vec<f64> = data.iter().map(|d| d.0).collect();
    let y: Vec<f64> = data.iter().map(|d| d.1).collect();
    let mut problem = DecayProblem {
        t: &t,
        y: &y,
        sqrt_w: y.iter().map(|c| 1.0 / c.max(1.0).sqrt()).collect(),
        branch,
        template: *init,
        x: DVector::from_vec(pack(init, branch)),
        relative_step: cfg.relative_step,
    };
    let mut evaluations = 0;
    for _ in 0..cfg.reweight_rounds.max(1) {
        let start = problem.x.clone();
        let (solved, report) = LevenbergMarquardt::new()
            .with_patience(cfg.patience)
            .with_ftol(cfg.tolerance)
            .with_xtol(cfg.tolerance)
            .minimize(problem);
        problem = solved;
        evaluations += report.number_of_evaluations;
        if !report.termination.was_successful() {
            return Err(match report.termination {
                TerminationReason::LostPatience | TerminationReason::NoImprovementPossible(_) => {
                    Error::NonConvergence { iterations: evaluations }
                }
                _ => Error::IllConditioned,
            });
        }
        let change = (&problem.x - &start).abs().component_div(&start.abs().add_scalar(1e-300)).max();
        let p = unpack(problem.x.as_slice(), branch, init);
        problem.sqrt_w = t.iter().map(|ti| 1.0 / convolved_model(&p, branch, *ti).max(1.0).sqrt()).collect();
        if change < 1e-9 {
            break;
        }
    }

    let mut x = problem.x.as_slice().to_vec();
    let n = x.len();
    for v in x.iter_mut().take(n - 2) {
        *v = v.abs();
    }
    let jac = problem.jacobian().ok_or(Error::IllConditioned)?;
    let r = problem.residuals().ok_or(Error::IllConditioned)?;
    let col_norms: Vec<f64> = (0..n).map(|j| jac.column(j).norm()).collect();
    if col_norms.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::IllConditioned);
    }
    let mut scaled = jac.clone();
    for j in 0..n {
        scaled.column_mut(j).scale_mut(1.0 / col_norms[j]);
    }
    let sv = scaled.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-10 * smax) {
        return Err(Error::IllConditioned);
    }
    let normal_inv = (scaled.transpose() * &scaled).try_inverse().ok_or(Error::IllConditioned)?;
    let cov = DMatrix::from_fn(n, n, |i, j| normal_inv[(i, j)] / (col_norms[i] * col_norms[j]));
    let chi2 = r.norm_squared();
    let dof = (t.len() - n) as f64;
    let sd: Vec<f64> = (0..n).map(|i| cov[(i, i)].sqrt()).collect();
    let mut sigma = unpack(&sd, branch, init);
    if branch == Branch::Biexciton {
        sigma.gamma_x = 0.0;
    }
    Ok(LifetimeFit {
        branch,
        params: unpack(&x, branch, init),
        covariance: (0..n).map(|i| (0..n).map(|j| cov[(i, j)]).collect()).collect(),
        sigma,
        chi2,
        chi2_reduced: chi2 / dof,
        evaluations,
    })
}

/// Reads a `time_ps,counts` table into `(t_ns, counts)`.
pub fn read_decay_csv<R: BufRead>(input: R) -> Result<Vec<(f64, f64)>> {
    let mut rows = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("time") {
            continue;
        }
        let parse_err = || Error::InvalidParameter(format!("line {}: expected `time_ps,counts`", n + 1));
        let (t, c) = line.split_once(',').ok_or_else(parse_err)?;
        let t: f64 = t.trim().parse().map_err(|_| parse_err())?;
        let c: f64 = c.trim().parse().map_err(|_| parse_err())?;
        rows.push((t * 1e-3, c));
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperGaussianFilter<T: Real> {
    pub center: T,
    /// Full width at half maximum.
    pub bandwidth: T,
    pub order: T,
}

impl<T: Real> SuperGaussianFilter<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > T::zero()) || !(self.order >= T::one()) || !self.center.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "super-Gaussian needs bandwidth > 0 and order >= 1, got {} and {}",
                self.bandwidth, self.order
            )));
        }
        Ok(())
    }
}

/// `exp(−ln2 · (2|ν − c|/Γ)^{2n})`.
pub fn super_gaussian<T: Real>(nu: T, filter: &SuperGaussianFilter<T>) -> T {
    let x = T::lit(2.0) * (nu - filter.center).abs() / filter.bandwidth;
    (-T::LN_2() * x.powf(T::lit(2.0) * filter.order)).exp()
}
