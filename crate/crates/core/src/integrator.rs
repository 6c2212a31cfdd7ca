//! Explicit Runge–Kutta integration of linear complex ODEs `y' = f(t, y)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cr, Real, C};

/// Right-hand side of a first-order system on a complex state vector.
pub trait Rhs<T: Real>: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, t: T, y: &[C<T>], dy: &mut [C<T>]);
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    /// Classical RK4 with the given step.
    FixedRk4 { step: f64 },
    /// Dormand–Prince 5(4) with PI-free standard step control.
    DormandPrince,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub min_steps_per_pulse: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::DormandPrince,
            rel_tol: 1e-9,
            abs_tol: 1e-11,
            max_step: f64::INFINITY,
            min_steps_per_pulse: 50,
        }
    }
}

impl IntegratorConfig {
    pub fn fixed_rk4(step: f64) -> Self {
        Self { method: Method::FixedRk4 { step }, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidParameter("integrator tolerances must be > 0".into()));
        }
        if self.min_steps_per_pulse < 20 {
            return Err(Error::InvalidParameter(format!(
                "min_steps_per_pulse must be >= 20, got {}",
                self.min_steps_per_pulse
            )));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::InvalidParameter("max_step must be > 0".into()));
        }
        if let Method::FixedRk4 { step } = self.method {
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::InvalidParameter("fixed step must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Interval on which steps are capped to `len / min_steps_per_pulse`.
#[derive(Clone, Copy, Debug)]
pub struct ResolvedWindow<T> {
    pub start: T,
    pub end: T,
}

// Dormand–Prince tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

/// Reusable integrator state: work buffers, the current step size, and the
/// FSAL derivative.
pub struct Stepper<'a, T: Real, R: Rhs<T>> {
    rhs: &'a R,
    cfg: IntegratorConfig,
    windows: Vec<ResolvedWindow<T>>,
    abs_scale: T,
    component_scale: Option<Vec<T>>,
    h: Option<T>,
    k: [Vec<C<T>>; 7],
    tmp: Vec<C<T>>,
    fsal_valid: bool,
    steps: usize,
}

impl<'a, T: Real, R: Rhs<T>> Stepper<'a, T, R> {
    pub fn new(rhs: &'a R, cfg: IntegratorConfig, windows: Vec<ResolvedWindow<T>>) -> Self {
        let n = rhs.dim();
        let z = || vec![C::new(T::zero(), T::zero()); n];
        Self {
            rhs,
            cfg,
            windows,
            abs_scale: T::one(),
            component_scale: None,
            h: None,
            k: [z(), z(), z(), z(), z(), z(), z()],
            tmp: z(),
            fsal_valid: false,
            steps: 0,
        }
    }

    /// Multiplies the absolute tolerance; used for unnormalized states whose
    /// overall weight is far from one.
    pub fn with_abs_scale(mut self, scale: T) -> Self {
        self.abs_scale = scale;
        self
    }

    /// Per-component multipliers of the absolute tolerance, for states whose
    /// entries live on very different scales.
    pub fn with_component_scale(mut self, scale: Option<Vec<T>>) -> Self {
        if let Some(s) = &scale {
            assert_eq!(s.len(), self.rhs.dim(), "component scale length");
        }
        self.component_scale = scale;
        self
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Advances `y` from `t0` to `t1` in place.
    pub fn advance(&mut self, y: &mut [C<T>], t0: T, t1: T) -> Result<()> {
        if t1 <= t0 {
            return Ok(());
        }
        match self.cfg.method {
            Method::FixedRk4 { step } => self.advance_rk4(y, t0, t1, T::lit(step)),
            Method::DormandPrince => self.advance_dp(y, t0, t1),
        }
    }

    fn step_cap(&self, t: T) -> T {
        let n = T::from_usize(self.cfg.min_steps_per_pulse).expect("small integer");
        let mut cap = T::lit(self.cfg.max_step);
        for w in &self.windows {
            if t >= w.end {
                continue;
            }
            let fine = (w.end - w.start) / n;
            let lim = if t >= w.start { fine } else { (w.start - t) + fine };
            cap = cap.min(lim);
        }
        cap
    }

    fn advance_rk4(&mut self, y: &mut [C<T>], t0: T, t1: T, step: T) -> Result<()> {
        let n = y.len();
        let mut t = t0;
        let half = T::lit(0.5);
        while t < t1 {
            let h = step.min(self.step_cap(t)).min(t1 - t);
            let step_end_close = t1 - (t + h) <= T::epsilon() * t1.abs().max(T::one()) * T::lit(4.0);
            let [k1, k2, k3, k4, ..] = &mut self.k;
            self.rhs.eval(t, y, k1);
            for i in 0..n {
                self.tmp[i] = y[i] + k1[i] * cr(h * half);
            }
            self.rhs.eval(t + h * half, &self.tmp, k2);
            for i in 0..n {
                self.tmp[i] = y[i] + k2[i] * cr(h * half);
            }
            self.rhs.eval(t + h * half, &self.tmp, k3);
            for i in 0..n {
                self.tmp[i] = y[i] + k3[i] * cr(h);
            }
            self.rhs.eval(t + h, &self.tmp, k4);
            let w = h / T::lit(6.0);
            for i in 0..n {
                y[i] = y[i] + (k1[i] + k2[i] * cr(T::lit(2.0)) + k3[i] * cr(T::lit(2.0)) + k4[i]) * cr(w);
            }
            t = if step_end_close { t1 } else { t + h };
            self.steps += 1;
        }
        self.fsal_valid = false;
        Ok(())
    }

    fn error_norm(&self, y: &[C<T>], ynew: &[C<T>], err: &[C<T>]) -> T {
        let atol = T::lit(self.cfg.abs_tol) * self.abs_scale;
        let rtol = T::lit(self.cfg.rel_tol);
        let mut acc = T::zero();
        for i in 0..y.len() {
            let a = match &self.component_scale {
                Some(w) => atol * w[i],
                None => atol,
            };
            let sc = a + rtol * y[i].norm().max(ynew[i].norm());
            if sc == T::zero() && err[i].norm() == T::zero() {
                continue;
            }
            let r = err[i].norm() / sc;
            acc = acc + r * r;
        }
        (acc / T::from_usize(y.len().max(1)).expect("len")).sqrt()
    }

    fn advance_dp(&mut self, y: &mut [C<T>], t0: T, t1: T) -> Result<()> {
        let n = y.len();
        let mut t = t0;
        let span = t1 - t0;
        let mut h = match self.h {
            Some(h) => h,
            None => (span * T::lit(1e-3)).min(T::lit(1e-3)),
        };
        if !self.fsal_valid {
            self.rhs.eval(t, y, &mut self.k[0]);
            self.fsal_valid = true;
        }
        let mut ynew = vec![C::new(T::zero(), T::zero()); n];
        let mut err = vec![C::new(T::zero(), T::zero()); n];
        while t < t1 {
            let cap = self.step_cap(t);
            let remaining = t1 - t;
            let mut hs = h.min(cap);
            let mut hits_end = false;
            if hs >= remaining {
                hs = remaining;
                hits_end = true;
            } else if hs > remaining * T::lit(0.5) && hs < remaining {
                // avoid a tiny final sliver
                hs = remaining * T::lit(0.5);
            }
            let tiny = T::lit(1e-14) * t.abs().max(T::one());
            if hs < tiny {
                return Err(Error::StepSizeUnderflow { t: t.to_f64_lossy(), h: hs.to_f64_lossy() });
            }
            let lit = |x: f64| cr(hs * T::lit(x));
            {
                let (k1s, rest) = self.k.split_at_mut(1);
                let k1 = &k1s[0];
                let [k2, k3, k4, k5, k6, k7] = rest else { unreachable!() };
                for i in 0..n {
                    self.tmp[i] = y[i] + k1[i] * lit(A21);
                }
                self.rhs.eval(t + hs * T::lit(C2), &self.tmp, k2);
                for i in 0..n {
                    self.tmp[i] = y[i] + k1[i] * lit(A31) + k2[i] * lit(A32);
                }
                self.rhs.eval(t + hs * T::lit(C3), &self.tmp, k3);
                for i in 0..n {
                    self.tmp[i] = y[i] + k1[i] * lit(A41) + k2[i] * lit(A42) + k3[i] * lit(A43);
                }
                self.rhs.eval(t + hs * T::lit(C4), &self.tmp, k4);
                for i in 0..n {
                    self.tmp[i] =
                        y[i] + k1[i] * lit(A51) + k2[i] * lit(A52) + k3[i] * lit(A53) + k4[i] * lit(A54);
                }
                self.rhs.eval(t + hs * T::lit(C5), &self.tmp, k5);
                for i in 0..n {
                    self.tmp[i] = y[i]
                        + k1[i] * lit(A61)
                        + k2[i] * lit(A62)
                        + k3[i] * lit(A63)
                        + k4[i] * lit(A64)
                        + k5[i] * lit(A65);
                }
                self.rhs.eval(t + hs, &self.tmp, k6);
                for i in 0..n {
                    ynew[i] = y[i]
                        + k1[i] * lit(B1)
                        + k3[i] * lit(B3)
                        + k4[i] * lit(B4)
                        + k5[i] * lit(B5)
                        + k6[i] * lit(B6);
                }
                self.rhs.eval(t + hs, &ynew, k7);
                for i in 0..n {
                    err[i] = k1[i] * lit(E1)
                        + k3[i] * lit(E3)
                        + k4[i] * lit(E4)
                        + k5[i] * lit(E5)
                        + k6[i] * lit(E6)
                        + k7[i] * lit(E7);
                }
            }
            let en = self.error_norm(y, &ynew, &err);
            let fac = if en == T::zero() {
                T::lit(5.0)
            } else {
                (T::lit(0.9) * en.powf(T::lit(-0.2))).max(T::lit(0.2)).min(T::lit(5.0))
            };
            if en <= T::one() && en.is_finite() {
                y.copy_from_slice(&ynew);
                self.k.swap(0, 6);
                t = if hits_end { t1 } else { t + hs };
                self.steps += 1;
                // a step clipped to the interval end does not shrink the proposal
                if !hits_end || hs >= h {
                    h = hs * fac;
                }
            } else {
                let shrink = if en.is_finite() { fac.min(T::lit(0.9)) } else { T::lit(0.2) };
                h = hs * shrink;
            }
        }
        self.h = Some(h);
        Ok(())
    }
}
