//! Detection-chain Monte Carlo: pulsed photon streams with background,
//! HBT splitting, coincidence histograms and the peak-sum g² estimator.
//!
//! Times in configs are in ns, click timestamps are integer ps.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PS_PER_NS: f64 = 1000.0;

/// Pulses per RNG substream. Shard `k` covers pulses `[k·SHARD, (k+1)·SHARD)`
/// and draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `k`.
pub const SHARD_PULSES: u64 = 1 << 16;

/// Periodic acceptance modulation of the emitter photons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blinking {
    /// Tones in MHz.
    pub frequencies: Vec<f64>,
    /// Peak-to-peak fractional drop of the acceptance.
    pub depth: f64,
}

impl Blinking {
    /// Acceptance in `[1 − depth, 1]` at time `t_ns`.
    pub fn acceptance(&self, t_ns: f64) -> f64 {
        if self.frequencies.is_empty() {
            return 1.0;
        }
        let n = self.frequencies.len() as f64;
        let dip: f64 = self
            .frequencies
            .iter()
            .map(|f| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * f * 1e-3 * t_ns).cos()))
            .sum::<f64>()
            / n;
        1.0 - self.depth * dip
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    /// ns
    pub rep_period: f64,
    pub n_pulses: u64,
    /// Probability that a pulse yields at least one photon.
    pub p_single: f64,
    /// Probability that a pulse yields an instantaneous + reexcited pair.
    pub p_double: f64,
    /// ns
    pub emitter_lifetime: f64,
    /// ns
    pub pulse_sigma: f64,
    /// Background counts per second, before splitting and thinning.
    pub noise_rate: f64,
    pub detection_efficiency: f64,
    pub blinking: Option<Blinking>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            rep_period: 13.1,
            n_pulses: 1_000_000,
            p_single: 0.1,
            p_double: 0.0,
            emitter_lifetime: 0.294,
            pulse_sigma: 0.003,
            noise_rate: 0.0,
            detection_efficiency: 1.0,
            blinking: None,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.rep_period > 0.0 && self.rep_period.is_finite()) {
            return bad(format!("rep_period must be > 0, got {}", self.rep_period));
        }
        if !(0.0 <= self.p_double && self.p_double <= self.p_single && self.p_single <= 1.0) {
            return bad(format!(
                "need 0 <= p_double <= p_single <= 1, got p_double={} p_single={}",
                self.p_double, self.p_single
            ));
        }
        if !(self.emitter_lifetime > 0.0 && self.emitter_lifetime.is_finite()) {
            return bad(format!("emitter_lifetime must be > 0, got {}", self.emitter_lifetime));
        }
        if !(self.pulse_sigma >= 0.0 && self.pulse_sigma.is_finite()) {
            return bad(format!("pulse_sigma must be >= 0, got {}", self.pulse_sigma));
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) {
            return bad(format!("noise_rate must be >= 0, got {}", self.noise_rate));
        }
        if !(0.0..=1.0).contains(&self.detection_efficiency) {
            return bad(format!("detection_efficiency must lie in [0, 1], got {}", self.detection_efficiency));
        }
        if let Some(b) = &self.blinking {
            if !(0.0..=1.0).contains(&b.depth) {
                return bad(format!("blinking depth must lie in [0, 1], got {}", b.depth));
            }
            if b.frequencies.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
                return bad("blinking frequencies must be positive".into());
            }
        }
        Ok(())
    }

    /// Stream duration in ns.
    pub fn duration(&self) -> f64 {
        self.n_pulses as f64 * self.rep_period
    }

    /// Sets `noise_rate` so that, inside one estimator window of `window_ns`
    /// per pulse, signal photons outnumber background photons `ratio : 1`.
    pub fn with_signal_to_noise(mut self, ratio: f64, window_ns: f64) -> Self {
        let signal = self.p_single + self.p_double;
        self.noise_rate = signal / (ratio * window_ns * 1e-9);
        self
    }
}

/// Click timestamps (ps, ascending) of the two HBT detectors.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClickStreams {
    pub detector1: Vec<i64>,
    pub detector2: Vec<i64>,
}

impl ClickStreams {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "detector,timestamp_ps")?;
        for t in &self.detector1 {
            writeln!(out, "1,{t}")?;
        }
        for t in &self.detector2 {
            writeln!(out, "2,{t}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut s = Self::default();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("detector") {
                continue;
            }
            let parse_err = || Error::InvalidParameter(format!("line {}: expected `detector,timestamp_ps`", n + 1));
            let (d, t) = line.split_once(',').ok_or_else(parse_err)?;
            let t: i64 = t.trim().parse().map_err(|_| parse_err())?;
            match d.trim() {
                "1" => s.detector1.push(t),
                "2" => s.detector2.push(t),
                _ => return Err(parse_err()),
            }
        }
        Ok(s)
    }
}

fn to_ps(t_ns: f64) -> i64 {
    (t_ns * PS_PER_NS).round() as i64
}

fn synthesize_shard(cfg: &StreamConfig, seed: u64, shard: u64) -> (Vec<i64>, Vec<i64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shard);
    let first = shard * SHARD_PULSES;
    let last = (first + SHARD_PULSES).min(cfg.n_pulses);
    let decay = Exp::new(1.0 / cfg.emitter_lifetime).expect("validated lifetime");
    let jitter = Normal::new(0.0, cfg.pulse_sigma).expect("validated sigma");
    let mut d1 = Vec::new();
    let mut d2 = Vec::new();

    let mut detect = |rng: &mut ChaCha8Rng, t_ns: f64, emitter: bool| {
        if let (true, Some(b)) = (emitter, &cfg.blinking) {
            if !rng.gen_bool(b.acceptance(t_ns).clamp(0.0, 1.0)) {
                return;
            }
        }
        let to_first = rng.gen_bool(0.5);
        if !rng.gen_bool(cfg.detection_efficiency) {
            return;
        }
        if to_first {
            d1.push(to_ps(t_ns));
        } else {
            d2.push(to_ps(t_ns));
        }
    };

    for k in first..last {
        let t_pulse = k as f64 * cfg.rep_period;
        let u: f64 = rng.gen();
        if u < cfg.p_double {
            let ta = t_pulse + jitter.sample(&mut rng);
            let tb = ta + decay.sample(&mut rng);
            detect(&mut rng, ta, true);
            detect(&mut rng, tb, true);
        } else if u < cfg.p_single {
            let t = t_pulse + decay.sample(&mut rng);
            detect(&mut rng, t, true);
        }
    }

    if cfg.noise_rate > 0.0 {
        let start = first as f64 * cfg.rep_period;
        let len = (last - first) as f64 * cfg.rep_period;
        let mean = cfg.noise_rate * 1e-9 * len;
        let count = Poisson::new(mean).map(|p| p.sample(&mut rng) as u64).unwrap_or(0);
        for _ in 0..count {
            let t = start + rng.gen::<f64>() * len;
            detect(&mut rng, t, false);
        }
    }
    (d1, d2)
}

/// Synthesizes the two detector click lists. Pulse `k` fires at
/// `k · rep_period`; the result depends only on `(cfg, seed)`.
pub fn synthesize_stream(cfg: &StreamConfig, seed: u64) -> Result<ClickStreams> {
    cfg.validate()?;
    let shards = cfg.n_pulses.div_ceil(SHARD_PULSES);
    let parts: Vec<(Vec<i64>, Vec<i64>)> =
        (0..shards).into_par_iter().map(|s| synthesize_shard(cfg, seed, s)).collect();
    let mut out = ClickStreams::default();
    for (a, b) in parts {
        out.detector1.extend(a);
        out.detector2.extend(b);
    }
    out.detector1.sort_unstable();
    out.detector2.sort_unstable();
    Ok(out)
}

/// Histogram of delays `t₂ − t₁`. Bin `i` is centred on
/// `(i − half) · bin_width` where `half = (len − 1) / 2`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    /// ps
    pub bin_width: i64,
    pub counts: Vec<u64>,
    /// ps
    pub span: i64,
}

impl CoincidenceHistogram {
    pub fn half(&self) -> usize {
        (self.counts.len() - 1) / 2
    }

    /// Centre delay of bin `i` in ps.
    pub fn delay(&self, i: usize) -> i64 {
        (i as i64 - self.half() as i64) * self.bin_width
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "delay_ps,counts")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{},{}", self.delay(i), c)?;
        }
        Ok(())
    }

    /// Reads a `delay_ps,counts` table with uniformly spaced, centred bins.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut rows: Vec<(i64, u64)> = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("delay") {
                continue;
            }
            let parse_err = || Error::InvalidParameter(format!("line {}: expected `delay_ps,counts`", n + 1));
            let (d, c) = line.split_once(',').ok_or_else(parse_err)?;
            let d: i64 = d.trim().parse().map_err(|_| parse_err())?;
            let c: f64 = c.trim().parse().map_err(|_| parse_err())?;
            if !(c >= 0.0) || c.fract() != 0.0 {
                return Err(Error::InvalidParameter(format!("line {}: counts must be a non-negative integer", n + 1)));
            }
            rows.push((d, c as u64));
        }
        if rows.len() < 3 || rows.len() % 2 == 0 {
            return Err(Error::InvalidParameter(format!("histogram needs an odd number (>= 3) of bins, got {}", rows.len())));
        }
        let w = rows[1].0 - rows[0].0;
        let half = (rows.len() - 1) / 2;
        for (i, (d, _)) in rows.iter().enumerate() {
            if *d != (i as i64 - half as i64) * w || w <= 0 {
                return Err(Error::InvalidParameter(format!("bin {i}: delays must be uniform and centred on zero")));
            }
        }
        Ok(Self { bin_width: w, counts: rows.into_iter().map(|r| r.1).collect(), span: half as i64 * w })
    }
}

fn check_sorted(clicks: &[i64]) -> Result<()> {
    match clicks.windows(2).position(|w| w[1] < w[0]) {
        Some(i) => Err(Error::UnsortedInput { index: i + 1 }),
        None => Ok(()),
    }
}

/// Histograms every pair with `|t₂ − t₁| ≤ span` in one two-pointer sweep.
pub fn correlate(clicks1: &[i64], clicks2: &[i64], bin_width: i64, span: i64) -> Result<CoincidenceHistogram> {
    if bin_width <= 0 || span < 0 {
        return Err(Error::InvalidParameter(format!("bin_width must be > 0 and span >= 0, got {bin_width}, {span}")));
    }
    check_sorted(clicks1)?;
    check_sorted(clicks2)?;
    let half = (span + bin_width - 1) / bin_width;
    let mut counts = vec![0u64; 2 * half as usize + 1];
    let offset = bin_width / 2;
    let mut lo = 0usize;
    for &t1 in clicks1 {
        while lo < clicks2.len() && clicks2[lo] < t1 - span {
            lo += 1;
        }
        for &t2 in &clicks2[lo..] {
            let d = t2 - t1;
            if d > span {
                break;
            }
            let b = (d + offset).div_euclid(bin_width);
            counts[(b + half) as usize] += 1;
        }
    }
    Ok(CoincidenceHistogram { bin_width, counts, span })
}

/// Delay interval masked from every estimator window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedRegion {
    pub center_ns: f64,
    pub width_ns: f64,
}

impl ExcludedRegion {
    fn contains(&self, delay_ns: f64) -> bool {
        (delay_ns - self.center_ns).abs() <= 0.5 * self.width_ns
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct G2Estimate {
    pub value: f64,
    pub sigma: f64,
    pub center_sum: u64,
    pub side_sums: [u64; 2],
    pub window_ns: f64,
    pub excluded: Vec<ExcludedRegion>,
}

impl G2Estimate {
    pub fn side_mean(&self) -> f64 {
        0.5 * (self.side_sums[0] + self.side_sums[1]) as f64
    }
}

fn check_windows(hist: &CoincidenceHistogram, rep_period: f64, window: f64) -> Result<()> {
    if !(window > 0.0 && rep_period > 0.0) {
        return Err(Error::InvalidParameter(format!("window and rep_period must be > 0, got {window}, {rep_period}")));
    }
    if window > rep_period {
        return Err(Error::WindowOverlap { window_ns: window, rep_period_ns: rep_period });
    }
    let span_ns = hist.span as f64 / PS_PER_NS;
    if span_ns < rep_period + window {
        return Err(Error::SpanTooShort { span_ns, required_ns: rep_period + window });
    }
    Ok(())
}

/// Counts with delays in `[centre − window/2, centre + window/2)`.
fn window_sum(hist: &CoincidenceHistogram, centre: f64, window: f64, excluded: &[ExcludedRegion]) -> u64 {
    hist.counts
        .iter()
        .enumerate()
        .filter(|&(i, _)| {
            let d = hist.delay(i) as f64 / PS_PER_NS;
            d >= centre - 0.5 * window && d < centre + 0.5 * window && !excluded.iter().any(|e| e.contains(d))
        })
        .map(|(_, c)| *c)
        .sum()
}

/// Centre peak over the mean of the two neighbouring side peaks, with
/// Gaussian propagation of Poisson errors on all three sums.
pub fn estimate_g2(
    hist: &CoincidenceHistogram,
    rep_period: f64,
    window: f64,
    excluded: &[ExcludedRegion],
) -> Result<G2Estimate> {
    check_windows(hist, rep_period, window)?;
    let c = window_sum(hist, 0.0, window, excluded);
    let s1 = window_sum(hist, -rep_period, window, excluded);
    let s2 = window_sum(hist, rep_period, window, excluded);
    let (value, sigma) = peak_ratio(c as f64, s1 as f64, s2 as f64)?;
    Ok(G2Estimate { value, sigma, center_sum: c, side_sums: [s1, s2], window_ns: window, excluded: excluded.to_vec() })
}

/// `C / S̄` and its Poisson-propagated 1σ error.
pub fn peak_ratio(center: f64, side1: f64, side2: f64) -> Result<(f64, f64)> {
    let mean = 0.5 * (side1 + side2);
    if !(mean > 0.0) {
        return Err(Error::InvalidParameter("side peaks are empty; g2 undefined".into()));
    }
    let value = center / mean;
    let var = center / (mean * mean) + center * center * (side1 + side2) / (4.0 * mean.powi(4));
    Ok((value, var.sqrt()))
}

/// Summed counts of every complete peak `k · rep_period` inside the span.
pub fn peak_sums(hist: &CoincidenceHistogram, rep_period: f64, window: f64) -> Result<Vec<(i64, u64)>> {
    check_windows(hist, rep_period, window)?;
    let span_ns = hist.span as f64 / PS_PER_NS;
    let kmax = ((span_ns - 0.5 * window) / rep_period).floor() as i64;
    let mut sums = vec![0u64; (2 * kmax + 1) as usize];
    for (i, c) in hist.counts.iter().enumerate() {
        if *c == 0 {
            continue;
        }
        let d = hist.delay(i) as f64 / PS_PER_NS;
        let k = (d / rep_period).round() as i64;
        let rel = d - k as f64 * rep_period;
        if k.abs() <= kmax && rel >= -0.5 * window && rel < 0.5 * window {
            sums[(k + kmax) as usize] += c;
        }
    }
    Ok((-kmax..=kmax).zip(sums).collect())
}

/// Side-peak scatter around a constant, for blinking inspection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flatness {
    pub mean: f64,
    pub chi2: f64,
    pub dof: usize,
    pub max_abs_z: f64,
}

impl Flatness {
    /// No excess scatter: χ² at most three standard deviations above its
    /// expectation. Side peaks of one histogram share clicks and are
    /// positively correlated, so an unmodulated stream sits below `dof`.
    pub fn is_flat(&self) -> bool {
        let dof = self.dof as f64;
        self.chi2 - dof <= 3.0 * (2.0 * dof).sqrt()
    }
}

/// Poisson χ² of the side peaks (`k ≠ 0`) against their mean.
pub fn side_peak_flatness(sums: &[(i64, u64)]) -> Flatness {
    let side: Vec<f64> = sums.iter().filter(|(k, _)| *k != 0).map(|(_, c)| *c as f64).collect();
    let mean = side.iter().sum::<f64>() / side.len().max(1) as f64;
    let sd = mean.sqrt().max(f64::MIN_POSITIVE);
    let chi2 = side.iter().map(|c| (c - mean).powi(2) / mean.max(f64::MIN_POSITIVE)).sum();
    let max_abs_z = side.iter().map(|c| ((c - mean) / sd).abs()).fold(0.0, f64::max);
    Flatness { mean, chi2, dof: side.len().saturating_sub(1), max_abs_z }
}

/// Periodogram of the positive-delay side peaks versus modulation frequency
/// in MHz, mean removed, excluding the zero-frequency term.
pub fn peak_spectrum(sums: &[(i64, u64)], rep_period: f64) -> Vec<(f64, f64)> {
    let x: Vec<f64> = sums.iter().filter(|(k, _)| *k > 0).map(|(_, c)| *c as f64).collect();
    let n = x.len();
    if n < 4 {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    (1..=n / 2)
        .map(|m| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in x.iter().enumerate() {
                let ph = 2.0 * std::f64::consts::PI * (m * j) as f64 / n as f64;
                re += (v - mean) * ph.cos();
                im -= (v - mean) * ph.sin();
            }
            let freq_mhz = m as f64 / (n as f64 * rep_period) * 1e3;
            (freq_mhz, (re * re + im * im) / n as f64)
        })
        .collect()
}

/// Frequency (MHz) of the strongest nonzero periodogram line.
pub fn dominant_frequency(sums: &[(i64, u64)], rep_period: f64) -> Option<f64> {
    peak_spectrum(sums, rep_period)
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(f, _)| f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist_from(center: u64, s1: u64, s2: u64) -> CoincidenceHistogram {
        let w = 100;
        let span = 20_000;
        let half = span / w;
        let mut counts = vec![0u64; 2 * half as usize + 1];
        counts[half as usize] = center;
        counts[(half - 131) as usize] = s1;
        counts[(half + 131) as usize] = s2;
        CoincidenceHistogram { bin_width: w, counts, span }
    }

    #[test]
    fn ratio_and_sigma() {
        let e = estimate_g2(&hist_from(50, 100_000, 100_000), 13.1, 6.5, &[]).unwrap();
        assert_eq!(e.value, 5.0e-4);
        assert!((e.sigma - 7.0711e-5).abs() < 1e-8);
    }

    #[test]
    fn excluded_region_masks_counts() {
        let mut h = hist_from(50, 1000, 1000);
        let i = h.half() + 10;
        h.counts[i] = 400;
        let plain = estimate_g2(&h, 13.1, 6.5, &[]).unwrap();
        assert_eq!(plain.center_sum, 450);
        let masked = estimate_g2(&h, 13.1, 6.5, &[ExcludedRegion { center_ns: 1.0, width_ns: 0.5 }]).unwrap();
        assert_eq!(masked.center_sum, 50);
    }

    #[test]
    fn window_errors() {
        let h = hist_from(1, 1, 1);
        assert!(matches!(estimate_g2(&h, 13.1, 14.0, &[]), Err(Error::WindowOverlap { .. })));
        let short = CoincidenceHistogram { bin_width: 100, counts: vec![0; 201], span: 10_000 };
        assert!(matches!(estimate_g2(&short, 13.1, 6.5, &[]), Err(Error::SpanTooShort { .. })));
    }

    #[test]
    fn correlate_offset_pair() {
        let h = correlate(&[1000], &[1730], 5, 2000).unwrap();
        assert_eq!(h.total(), 1);
        let i = h.counts.iter().position(|&c| c == 1).unwrap();
        assert!((h.delay(i) - 730).abs() <= 2);
    }

    #[test]
    fn correlate_rejects_unsorted() {
        assert!(matches!(correlate(&[3, 1], &[0], 5, 10), Err(Error::UnsortedInput { index: 1 })));
    }

    #[test]
    fn histogram_csv_round_trip() {
        let h = correlate(&[0, 40, 90], &[10, 55, 100], 10, 100).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(CoincidenceHistogram::read_csv(&buf[..]).unwrap(), h);
    }

    #[test]
    fn clicks_csv_round_trip() {
        let s = ClickStreams { detector1: vec![-3, 4, 9], detector2: vec![7] };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(ClickStreams::read_csv(&buf[..]).unwrap(), s);
    }

    #[test]
    fn blinking_acceptance_bounds() {
        let b = Blinking { frequencies: vec![1.0], depth: 0.5 };
        assert_eq!(b.acceptance(0.0), 1.0);
        assert!((b.acceptance(500.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let c = StreamConfig { p_double: 0.2, p_single: 0.1, ..Default::default() };
        assert!(c.validate().is_err());
        assert!(StreamConfig::default().validate().is_ok());
    }
}
