//! Run configuration: a TOML file whose sections mirror the core types.
//! Unset values fall back to per-command defaults that reproduce the
//! corresponding figure.

use std::fmt;
use std::path::{Path, PathBuf};

use purity::analysis::Branch;
use purity::correlations::GridSpec;
use purity::integrator::IntegratorConfig;
use purity::photostream::{ExcludedRegion, StreamConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    TwoLevel,
    Biexciton,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Log,
    Linear,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub kind: Option<SystemKind>,
    pub decay_rate: Option<f64>,
    /// Laser detuning of the two-level emitter.
    pub detuning: Option<f64>,
    pub binding_energy: Option<f64>,
    /// Defaults to the two-photon resonance `E_b/2`.
    pub exciton_detuning: Option<f64>,
    /// Drive polarization `(θ, φ)`.
    pub polarization: Option<[f64; 2]>,
    pub eta: Option<[f64; 4]>,
    pub eta_imag: Option<[f64; 4]>,
    /// Physical value of the rate unit, recorded in metadata.
    pub gamma_sigma_ghz: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    pub area_over_pi: Option<f64>,
    pub length: Option<f64>,
    /// Curve set for spectrum, sweep-filter and sweep-fourlevel.
    pub lengths: Option<Vec<f64>>,
    /// Defaults to four pulse lengths.
    pub offset: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSection {
    pub detuning: Option<f64>,
    pub bandwidth: Option<f64>,
    /// Curve set for sweep-pulse.
    pub bandwidths: Option<Vec<f64>>,
    pub coupling: Option<f64>,
    pub truncation: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub points: Option<usize>,
    pub scale: Option<Scale>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub points_per_length: Option<usize>,
    pub window_lengths: Option<f64>,
    pub grading: Option<f64>,
    pub refinement: Option<usize>,
    pub horizon: Option<f64>,
}

impl GridSection {
    pub fn spec(&self) -> GridSpec {
        let d = GridSpec::default();
        GridSpec {
            points_per_length: self.points_per_length.unwrap_or(d.points_per_length),
            window_lengths: self.window_lengths.unwrap_or(d.window_lengths),
            grading: self.grading.unwrap_or(d.grading),
            refinement: self.refinement.unwrap_or(d.refinement),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HbtSection {
    pub bin_width_ps: i64,
    /// Histogram half-span; defaults to five repetition periods.
    pub span_ns: Option<f64>,
    pub window_ns: f64,
    pub excluded: Vec<ExcludedRegion>,
    /// Overrides `stream.noise_rate` with a signal:noise ratio inside the window.
    pub signal_to_noise: Option<f64>,
    pub write_clicks: bool,
}

impl Default for HbtSection {
    fn default() -> Self {
        Self {
            bin_width_ps: 5,
            span_ns: None,
            window_ns: 6.5,
            excluded: Vec::new(),
            signal_to_noise: None,
            write_clicks: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub branch: Option<Branch>,
    pub tau_2x_ps: Option<f64>,
    pub tau_x_ps: Option<f64>,
    pub irf_sigma_ps: Option<f64>,
    pub offset_ps: Option<f64>,
    pub amplitude: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default)]
    pub pulse: PulseSection,
    #[serde(default)]
    pub sensor: SensorSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub stream: StreamConfig,
    #[serde(default)]
    pub hbt: HbtSection,
    #[serde(default)]
    pub fit: FitSection,
}

/// A configuration problem, located in the source file when possible.
#[derive(Debug)]
pub struct ConfigError {
    pub file: Option<PathBuf>,
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(file) = &self.file {
            write!(f, "{}", file.display())?;
            if let Some(line) = self.line {
                write!(f, ":{line}")?;
            }
            write!(f, ": ")?;
        } else if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if !self.key.is_empty() {
            write!(f, "`{}`: ", self.key)?;
        }
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for ConfigError {}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// 1-based line of the value at `key` (dotted), or of the closest enclosing
/// table that exists.
pub fn locate(src: &str, key: &str) -> Option<usize> {
    let doc = toml_edit::ImDocument::parse(src.to_owned()).ok()?;
    let mut item = doc.as_item();
    let mut best = None;
    for part in key.split('.') {
        let (name, index) = match part.split_once('[') {
            Some((n, rest)) => (n, rest.trim_end_matches(']').parse::<usize>().ok()),
            None => (part, None),
        };
        match item.get(name) {
            Some(next) => {
                item = next;
                if let Some(span) = item.span() {
                    best = Some(line_of(src, span.start));
                } else if let Some(t) = item.as_table() {
                    best = t.span().map(|s| line_of(src, s.start)).or(best);
                }
            }
            None => break,
        }
        if let (Some(i), Some(arr)) = (index, item.as_array()) {
            if let Some(v) = arr.get(i) {
                best = v.span().map(|s| line_of(src, s.start)).or(best);
            }
        }
    }
    best
}

impl RunConfig {
    pub fn parse(src: &str, file: Option<&Path>) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| ConfigError {
            file: file.map(Path::to_path_buf),
            line: e.span().map(|s| line_of(src, s.start)),
            key: String::new(),
            message: e.message().to_string(),
        })?;
        cfg.validate().map_err(|(key, message)| ConfigError {
            file: file.map(Path::to_path_buf),
            line: locate(src, &key),
            key,
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|e| ConfigError {
            file: Some(path.to_path_buf()),
            line: None,
            key: String::new(),
            message: e.to_string(),
        })?;
        Self::parse(&src, Some(path))
    }

    /// Checks every value that is set; returns the offending dotted key.
    pub fn validate(&self) -> Result<(), (String, String)> {
        fn positive(key: &str, v: Option<f64>) -> Result<(), (String, String)> {
            match v {
                Some(x) if !(x > 0.0 && x.is_finite()) => Err((key.into(), format!("must be a positive number, got {x}"))),
                _ => Ok(()),
            }
        }
        fn finite(key: &str, v: Option<f64>) -> Result<(), (String, String)> {
            match v {
                Some(x) if !x.is_finite() => Err((key.into(), format!("must be finite, got {x}"))),
                _ => Ok(()),
            }
        }
        fn positive_list(key: &str, v: &Option<Vec<f64>>) -> Result<(), (String, String)> {
            if let Some(list) = v {
                if list.is_empty() {
                    return Err((key.into(), "must not be empty".into()));
                }
                for (i, x) in list.iter().enumerate() {
                    positive(&format!("{key}[{i}]"), Some(*x))?;
                }
                if list.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err((key.into(), "must be strictly increasing".into()));
                }
            }
            Ok(())
        }
        let core = |key: &str, r: purity::Result<()>| r.map_err(|e| (key.to_string(), e.to_string()));

        let s = &self.system;
        positive("system.decay_rate", s.decay_rate)?;
        finite("system.detuning", s.detuning)?;
        finite("system.binding_energy", s.binding_energy)?;
        finite("system.exciton_detuning", s.exciton_detuning)?;
        positive("system.gamma_sigma_ghz", s.gamma_sigma_ghz)?;
        if let Some([theta, phi]) = s.polarization {
            core("system.polarization", purity::PolarizationState { theta, phi }.validate())?;
        }
        if s.eta.is_some() || s.eta_imag.is_some() {
            core("system.eta", self.observation().map(|_| ()))?;
        }

        let p = &self.pulse;
        match p.area_over_pi {
            Some(a) if !(a >= 0.0 && a.is_finite()) => {
                return Err(("pulse.area_over_pi".into(), format!("must be >= 0, got {a}")));
            }
            _ => {}
        }
        positive("pulse.length", p.length)?;
        positive_list("pulse.lengths", &p.lengths)?;
        finite("pulse.offset", p.offset)?;

        let n = &self.sensor;
        finite("sensor.detuning", n.detuning)?;
        positive("sensor.bandwidth", n.bandwidth)?;
        positive_list("sensor.bandwidths", &n.bandwidths)?;
        positive("sensor.coupling", n.coupling)?;
        if let Some(t) = n.truncation {
            if t < 2 {
                return Err(("sensor.truncation".into(), format!("must be >= 2, got {t}")));
            }
        }

        let w = &self.sweep;
        finite("sweep.min", w.min)?;
        finite("sweep.max", w.max)?;
        if let (Some(lo), Some(hi)) = (w.min, w.max) {
            if !(hi > lo) {
                return Err(("sweep.max".into(), format!("must exceed sweep.min ({lo}), got {hi}")));
            }
        }
        if let Some(pts) = w.points {
            if pts < 2 {
                return Err(("sweep.points".into(), format!("must be >= 2, got {pts}")));
            }
        }

        core("integrator", self.integrator.validate())?;
        core("grid", self.grid.spec().validate())?;
        positive("grid.horizon", self.grid.horizon)?;

        core("stream", self.stream.validate())?;
        let h = &self.hbt;
        if h.bin_width_ps <= 0 {
            return Err(("hbt.bin_width_ps".into(), format!("must be > 0, got {}", h.bin_width_ps)));
        }
        positive("hbt.window_ns", Some(h.window_ns))?;
        positive("hbt.span_ns", h.span_ns)?;
        positive("hbt.signal_to_noise", h.signal_to_noise)?;
        for (i, e) in h.excluded.iter().enumerate() {
            positive(&format!("hbt.excluded[{i}]"), Some(e.width_ns))?;
        }

        let f = &self.fit;
        positive("fit.tau_2x_ps", f.tau_2x_ps)?;
        positive("fit.tau_x_ps", f.tau_x_ps)?;
        positive("fit.irf_sigma_ps", f.irf_sigma_ps)?;
        finite("fit.offset_ps", f.offset_ps)?;
        finite("fit.amplitude", f.amplitude)?;
        Ok(())
    }

    pub fn observation(&self) -> purity::Result<purity::ObservationVector> {
        let re = self.system.eta.unwrap_or([0.0, 0.0, 1.0, 0.0]);
        let im = self.system.eta_imag.unwrap_or([0.0; 4]);
        purity::ObservationVector::new(std::array::from_fn(|i| purity::C::new(re[i], im[i])))
    }
}
