use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use purity::analysis::{self, Branch, CascadeParams, FitConfig};
use purity::correlations::{
    self, CorrelationConfig, EmitterBuilder, EpsilonCheck, LadderEmitter, TwoLevelEmitter,
};
use purity::model::{build_two_level, GaussianPulse, SensorConfig};
use purity::photostream::{self, CoincidenceHistogram, PS_PER_NS};
use purity::{BiexcitonConfig, PolarizationState, SweepResult, TwoLevelConfig};
use serde_json::{json, Value};

use crate::config::{RunConfig, Scale, SystemKind};

/// Options shared by every subcommand after flag and config merging.
#[derive(Clone, Debug)]
pub struct Ctx {
    pub out: PathBuf,
    pub seed: u64,
    pub check_convergence: bool,
}

/// What a command produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub outputs: Vec<String>,
    pub converged: bool,
    pub resolved: Value,
    pub summary: Value,
}

fn create(ctx: &Ctx, name: &str, outputs: &mut Vec<String>) -> Result<BufWriter<File>> {
    let path = ctx.out.join(name);
    let f = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    outputs.push(name.to_string());
    Ok(BufWriter::new(f))
}

fn write_json(ctx: &Ctx, name: &str, value: &Value, outputs: &mut Vec<String>) -> Result<()> {
    let mut w = create(ctx, name, outputs)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn correlation_config(cfg: &RunConfig, ctx: &Ctx) -> CorrelationConfig {
    CorrelationConfig {
        integrator: cfg.integrator,
        grid: cfg.grid.spec(),
        horizon: cfg.grid.horizon,
        epsilon_check: if ctx.check_convergence { EpsilonCheck::Report } else { EpsilonCheck::Off },
    }
}

fn axis(cfg: &RunConfig, min: f64, max: f64, points: usize, scale: Scale) -> Vec<f64> {
    let w = &cfg.sweep;
    let (lo, hi, n) = (w.min.unwrap_or(min), w.max.unwrap_or(max), w.points.unwrap_or(points));
    match w.scale.unwrap_or(scale) {
        Scale::Log => correlations::log_grid(lo, hi, n),
        Scale::Linear => correlations::linear_grid(lo, hi, n),
    }
}

fn axis_json(values: &[f64], cfg: &RunConfig, default_scale: Scale) -> Value {
    json!({
        "min": values.first(),
        "max": values.last(),
        "points": values.len(),
        "scale": cfg.sweep.scale.unwrap_or(default_scale),
    })
}

fn two_level(cfg: &RunConfig) -> Result<TwoLevelEmitter<f64>> {
    if cfg.system.kind == Some(SystemKind::Biexciton) {
        bail!("this command needs a two_level system");
    }
    let d = TwoLevelConfig::default();
    let config = TwoLevelConfig {
        decay_rate: cfg.system.decay_rate.unwrap_or(d.decay_rate),
        detuning: cfg.system.detuning.unwrap_or(d.detuning),
    };
    config.validate()?;
    Ok(TwoLevelEmitter { config })
}

fn ladder(cfg: &RunConfig) -> Result<LadderEmitter<f64>> {
    if cfg.system.kind == Some(SystemKind::TwoLevel) {
        bail!("this command needs a biexciton system");
    }
    let s = &cfg.system;
    let d = BiexcitonConfig::default();
    let decay_rate = s.decay_rate.unwrap_or(d.decay_rate);
    let binding_energy = s.binding_energy.unwrap_or(d.binding_energy);
    let mut config = BiexcitonConfig::two_photon_resonant(decay_rate, binding_energy);
    if let Some(x) = s.exciton_detuning {
        config.exciton_detuning = x;
    }
    config.validate()?;
    let polarization = match s.polarization {
        Some([theta, phi]) => PolarizationState { theta, phi },
        None => PolarizationState::horizontal(),
    };
    Ok(LadderEmitter { config, polarization, eta: cfg.observation()? })
}

fn sensor_template(cfg: &RunConfig, detuning: f64, bandwidth: f64) -> SensorConfig<f64> {
    let s = &cfg.sensor;
    SensorConfig::new(s.detuning.unwrap_or(detuning), s.bandwidth.unwrap_or(bandwidth))
        .with_coupling(s.coupling.unwrap_or(SensorConfig::<f64>::DEFAULT_COUPLING))
        .with_truncation(s.truncation.unwrap_or(2))
}

fn sensor_json(t: &SensorConfig<f64>) -> Value {
    json!({ "detuning": t.detuning, "bandwidth": t.bandwidth, "coupling": t.coupling, "truncation": t.truncation })
}

fn units(cfg: &RunConfig) -> Value {
    match cfg.system.gamma_sigma_ghz {
        Some(g) => json!({ "gamma_sigma_ghz": g, "time_unit_ps": 1e3 / g }),
        None => json!({ "rate_unit": "gamma_sigma", "time_unit": "1/gamma_sigma" }),
    }
}

fn tag(x: f64) -> String {
    format!("{x}").replace('-', "m")
}

fn write_curves(
    ctx: &Ctx,
    prefix: &str,
    key: &str,
    curves: &[SweepResult],
    labels: &[f64],
    outputs: &mut Vec<String>,
) -> Result<Value> {
    let mut summary = Vec::new();
    for (curve, &label) in curves.iter().zip(labels) {
        let name = format!("{prefix}_{key}{}.csv", tag(label));
        let mut w = create(ctx, &name, outputs)?;
        curve.write_csv(&mut w)?;
        w.flush()?;
        let argmin = curve.argmin().map(|(x, v)| json!({ "axis_value": x, "g2": v }));
        summary.push(json!({
            key: label,
            "file": name,
            "all_converged": curve.all_converged(),
            "argmin": argmin,
            "physicality": curve.physicality,
        }));
    }
    Ok(Value::Array(summary))
}

fn physical(curves: &[SweepResult]) -> bool {
    curves.iter().all(|c| c.physicality.is_physical())
}

pub fn g2map(cfg: &RunConfig, ctx: &Ctx) -> Result<Outcome> {
    let emitter = two_level(cfg)?;
    let area = cfg.pulse.area_over_pi.unwrap_or(1.0) * std::f64::consts::PI;
    let tau = cfg.pulse.length.unwrap_or(0.05);
    let offset = cfg.pulse.offset.unwrap_or(0.2);
    let pulse = GaussianPulse::with_offset(area, tau, offset)?;
    let system = build_two_level(&emitter.config, &pulse)?;
    let emit = emitter.observed(&system)?;
    let ccfg = correlation_config(cfg, ctx);
    let grid = correlations::emitter_g2_map(&system, &emit, &ccfg)?;

    let mut outputs = Vec::new();
    let mut w = create(ctx, "g2map.csv", &mut outputs)?;
    grid.write_csv(&mut w)?;
    w.flush()?;

    let n = grid.len();
    let diag_max = (0..n).map(|i| grid.get(i, i).abs()).fold(0.0, f64::max);
    let off_max = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| grid.get(i, j)).fold(0.0, f64::max);
    Ok(Outcome {
        outputs,
        converged: true,
        resolved: json!({
            "emitter": emitter.describe(),
            "pulse": { "area_over_pi": area / std::f64::consts::PI, "length": tau, "offset": offset },
            "grid": ccfg.grid,
            "horizon": ccfg.horizon,
            "integrator": ccfg.integrator,
            "units": units(cfg),
        }),
        summary: json!({ "points": n, "diagonal_max": diag_max, "off_diagonal_max": off_max }),
    })
}

pub fn spectrum(cfg: &RunConfig, ctx: &Ctx) -> Result<Outcome> {
    let emitter = two_level(cfg)?;
    let area = cfg.pulse.area_over_pi.unwrap_or(1.0) * std::f64::consts::PI;
    let lengths = cfg.pulse.lengths.clone().unwrap_or_else(|| vec![0.02, 0.05, 0.2]);
    let detunings = axis(cfg, -40.0, 40.0, 161, Scale::Linear);
    let template = sensor_template(cfg, 0.0, 0.2);
    let ccfg = correlation_config(cfg, ctx);
    let mut curves = Vec::new();
    for &tau in &lengths {
        let pulse = match cfg.pulse.offset {
            Some(t0) => GaussianPulse::with_offset(area, tau, t0)?,
            None => GaussianPulse::new(area, tau)?,
        };
        let system = emitter.build(&pulse)?;
        let observed = emitter.observed(&system)?;
        curves.push(correlations::spectrum(&system, &observed, &detunings, &template, &ccfg)?);
    }
    let mut outputs = Vec::new();
    let summary = write_curves(ctx, "spectrum", "tau", &curves, &lengths, &mut outputs)?;
    Ok(Outcome {
        outputs,
        converged: physical(&curves),
        resolved: json!({
            "emitter": emitter.describe(),
            "pulse": { "area_over_pi": area / std::f64::consts::PI, "lengths": lengths, "offset": cfg.pulse.offset },
            "sensor": sensor_json(&template),
            "detuning": axis_json(&detunings, cfg, Scale::Linear),
            "grid": ccfg.grid,
            "integrator": ccfg.integrator,
            "units": units(cfg),
        }),
        summary,
    })
}

pub fn sweep_pulse(cfg: &RunConfig, ctx: &Ctx) -> Result<Outcome> {
    let emitter = two_level(cfg)?;
    let area = cfg.pulse.area_over_pi.unwrap_or(1.0) * std::f64::consts::PI;
    let taus = axis(cfg, 0.01, 1.0, 13, Scale::Log);
    let widths = cfg.sensor.bandwidths.clone().unwrap_or_else(|| vec![0.1, 1.0, 20.0]);
    let template = sensor_template(cfg, emitter.line_detuning(), widths[0]);
    let ccfg = correlation_config(cfg, ctx);
    let curves = correlations::sweep_pulse_length(&emitter, &taus, &widths, area, &template, &ccfg)?;
    let mut outputs = Vec::new();
    let summary = write_curves(ctx, "sweep_pulse", "gamma", &curves, &widths, &mut outputs)?;
    Ok(Outcome {
        outputs,
        converged: curves.iter().all(SweepResult::all_converged) && physical(&curves),
        resolved: json!({
            "emitter": emitter.describe(),
            "pulse": { "area_over_pi": area / std::f64::consts::PI },
            "pulse_length": axis_json(&taus, cfg, Scale::Log),
            "filter_widths": widths,
            "sensor": sensor_json(&template),
            "correlation": ccfg,
            "units": units(cfg),
        }),
        summary,
    })
}

pub fn sweep_filter(cfg: &RunConfig, ctx: &Ctx) -> Result<Outcome> {
    let emitter = two_level(cfg)?;
    let area = cfg.pulse.area_over_pi.unwrap_or(1.0) * std::f64::consts::PI;
    let gammas = axis(cfg, 0.05, 100.0, 15, Scale::Log);
    let taus = cfg.pulse.lengths.clone().unwrap_or_else(|| vec![0.02, 0.05, 0.2]);
    let template = sensor_template(cfg, emitter.line_detuning(), gammas[0]);
    let ccfg = correlation_config(cfg, ctx);
    let curves = correlations::sweep_filter_width(&emitter, &gammas, &taus, area, &template, &ccfg)?;
    let mut outputs = Vec::new();
    let summary = write_curves(ctx, "sweep_filter", "tau", &curves, &taus, &mut outputs)?;
    Ok(Outcome {
        outputs,
        converged: curves.iter().all(SweepResult::all_converged) && physical(&curves),
        resolved: json!({
            "emitter": emitter.describe(),
            "pulse": { "area_over_pi": area / std::f64::consts::PI, "lengths": taus },
            "filter_width": axis_json(&gammas, cfg, Scale::Log),
            "sensor": sensor_json(&template),
            "correlation": ccfg,
            "units": units(cfg),
        }),
        summary,
    })
}

/// Filter sweep of the exciton line of the biexciton cascade. Without an
/// explicit area each pulse length gets the area that maximizes the
/// biexciton preparation.
pub fn sweep_fourlevel(cfg: &RunConfig, ctx: &Ctx) -> Result<Outcome> {
    let emitter = ladder(cfg)?;
    let gammas = axis(cfg, 0.1, 100.0, 13, Scale::Log);
    let taus = cfg.pulse.lengths.clone().unwrap_or_else(|| vec![0.01]);
    let template = sensor_template(cfg, emitter.line_detuning(), gammas[0]);
    let ccfg = correlation_config(cfg, ctx);
    let mut curves = Vec::new();
    let mut areas = Vec::new();
    for &tau in &taus {
        let area = match cfg.pulse.area_over_pi {
            Some(a) => a * std::f64::consts::PI,
            None => correlations::two_photon_pi_area(&emitter.config, &emitter.polarization, tau, &ccfg.integrator)?,
        };
        areas.push(area / std::f64::consts::PI);
        curves.extend(correlations::sweep_filter_width(&emitter, &gammas, &[tau], area, &template, &ccfg)?);
    }
    let mut outputs = Vec::new();
    let summary = write_curves(ctx, "sweep_fourlevel", "tau", &curves, &taus, &mut outputs)?;
    Ok(Outcome {
        outputs,
        converged: curves.iter().all(SweepResult::all_converged) && physical(&curves),
        resolved: json!({
            "emitter": emitter.describe(),
            "pulse": { "lengths": taus, "area_over_pi": areas },
            "filter_width": axis_json(&gammas, cfg, Scale::Log),
            "sensor": sensor_json(&template),
            "correlation": ccfg,
            "units": units(cfg),
        }),
        summary,
    })
}

fn histogram_outputs(
    cfg: &RunConfig,
    ctx: &Ctx,
    hist: &CoincidenceHistogram,
    rep_period: f64,
    outputs: &mut Vec<String>,
) -> Result<Value> {
    let window = cfg.hbt.window_ns;
    let estimate = photostream::estimate_g2(hist, rep_period, window, &cfg.hbt.excluded)?;
    let sums = photostream::peak_sums(hist, rep_period, window)?;
    let mut w = create(ctx, "peak_sums.csv", outputs)?;
    writeln!(w, "peak,delay_ns,counts")?;
    for (k, c) in &sums {
        writeln!(w, "{k},{},{c}", *k as f64 * rep_period)?;
    }
    w.flush()?;
    let flatness = photostream::side_peak_flatness(&sums);
    let summary = json!({
        "g2": estimate,
        "side_peak_flatness": { "stats": flatness, "flat": flatness.is_flat() },
        "dominant_frequency_mhz": photostream::dominant_frequency(&sums, rep_period),
        "histogram_total": hist.total(),
    });
    write_json(ctx, "g2_estimate.json", &summary, outputs)?;
    Ok(summary)
}

pub fn hbt_sim(cfg: &RunConfig, ctx: &Ctx) -> Result<Outcome> {
    let mut stream = cfg.stream.clone();
    if let Some(ratio) = cfg.hbt.signal_to_noise {
        stream = stream.with_signal_to_noise(ratio, cfg.hbt.window_ns);
    }
    stream.validate()?;
    let clicks = photostream::synthesize_stream(&stream, ctx.seed)?;
    let span_ns = cfg.hbt.span_ns.unwrap_or(5.0 * stream.rep_period);
    let span = (span_ns * PS_PER_NS).round() as i64;
    let hist = photostream::correlate(&clicks.detector1, &clicks.detector2, cfg.hbt.bin_width_ps, span)?;

    let mut outputs = Vec::new();
    if cfg.hbt.write_clicks {
        let mut w = create(ctx, "clicks.csv", &mut outputs)?;
        clicks.write_csv(&mut w)?;
        w.flush()?;
    }
    let mut w = create(ctx, "histogram.csv", &mut outputs)?;
    hist.write_csv(&mut w)?;
    w.flush()?;
    let mut summary = histogram_outputs(cfg, ctx, &hist, stream.rep_period, &mut outputs)?;
    summary["clicks"] = json!([clicks.detector1.len(), clicks.detector2.len()]);
    Ok(Outcome {
        outputs,
        converged: true,
        resolved: json!({ "stream": stream, "hbt": cfg.hbt, "span_ns": span_ns, "seed": ctx.seed }),
        summary,
    })
}

pub fn analyze_histogram(cfg: &RunConfig, ctx: &Ctx, input: &Path) -> Result<Outcome> {
    let file = File::open(input).with_context(|| format!("cannot open {}", input.display()))?;
    let hist = CoincidenceHistogram::read_csv(BufReader::new(file))
        .with_context(|| format!("cannot read histogram {}", input.display()))?;
    let rep_period = cfg.stream.rep_period;
    let mut outputs = Vec::new();
    let summary = histogram_outputs(cfg, ctx, &hist, rep_period, &mut outputs)?;
    Ok(Outcome {
        outputs,
        converged: true,
        resolved: json!({
            "input": input.display().to_string(),
            "rep_period_ns": rep_period,
            "window_ns": cfg.hbt.window_ns,
            "excluded": cfg.hbt.excluded,
        }),
        summary,
    })
}

/// Starting point for the fit: configured values, otherwise typical cascade
/// lifetimes, a rise located at 10% of the maximum and a matching amplitude.
fn initial_guess(cfg: &RunConfig, branch: Branch, data: &[(f64, f64)]) -> CascadeParams {
    let f = &cfg.fit;
    let peak = data.iter().map(|d| d.1).fold(0.0, f64::max);
    let rise = data.iter().find(|d| d.1 >= 0.1 * peak).map_or(data[0].0, |d| d.0);
    let mut p = CascadeParams {
        gamma_2x: 1e3 / f.tau_2x_ps.unwrap_or(158.0),
        gamma_x: 1e3 / f.tau_x_ps.unwrap_or(294.0),
        irf_sigma: f.irf_sigma_ps.unwrap_or(30.0) * 1e-3,
        amplitude: 1.0,
        offset: f.offset_ps.map_or(rise, |o| o * 1e-3),
    };
    p.amplitude = match f.amplitude {
        Some(a) => a,
        None => {
            let shape = data.iter().map(|d| analysis::convolved_model(&p, branch, d.0)).fold(0.0, f64::max);
            if shape > 0.0 { peak / shape } else { peak }
        }
    };
    p
}

pub fn fit_lifetime(cfg: &RunConfig, ctx: &Ctx, input: &Path) -> Result<Outcome> {
    let file = File::open(input).with_context(|| format!("cannot open {}", input.display()))?;
    let data = analysis::read_decay_csv(BufReader::new(file))
        .with_context(|| format!("cannot read decay curve {}", input.display()))?;
    if data.is_empty() {
        bail!("{} holds no data", input.display());
    }
    let branch = cfg.fit.branch.unwrap_or(Branch::Exciton);
    let init = initial_guess(cfg, branch, &data);
    let fit = analysis::fit_lifetimes(&data, &init, branch, &FitConfig::default())?;

    let mut outputs = Vec::new();
    let summary = fit.to_json();
    write_json(ctx, "fit.json", &summary, &mut outputs)?;
    let mut w = create(ctx, "fit_curve.csv", &mut outputs)?;
    writeln!(w, "time_ps,counts,model")?;
    for &(t, c) in &data {
        writeln!(w, "{},{c},{:e}", t * 1e3, analysis::convolved_model(&fit.params, branch, t))?;
    }
    w.flush()?;
    Ok(Outcome {
        outputs,
        converged: true,
        resolved: json!({
            "input": input.display().to_string(),
            "branch": branch,
            "initial": init,
            "fit": FitConfig::default(),
        }),
        summary,
    })
}
