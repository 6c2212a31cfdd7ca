use approx::assert_relative_eq;
use proptest::prelude::*;
use purity::analysis::*;

#[test]
fn populations_satisfy_rate_equations() {
    let (g2, gx) = (1.0 / 0.158, 1.0 / 0.294);
    let h = 1e-5;
    for i in 1..400 {
        let t = i as f64 * 0.005;
        let (n2, nx) = cascade_populations(g2, gx, t);
        let (a2, ax) = cascade_populations(g2, gx, t + h);
        let (b2, bx) = cascade_populations(g2, gx, t - h);
        let d2 = (a2 - b2) / (2.0 * h);
        let dx = (ax - bx) / (2.0 * h);
        assert!((d2 + g2 * n2).abs() < 1e-8, "t={t}");
        assert!((dx - (g2 * n2 - gx * nx)).abs() < 1e-8, "t={t}");
    }
}

#[test]
fn exciton_peaks_where_derivative_vanishes() {
    let (g2, gx) = (6.0, 3.5);
    let t_star = (g2 / gx as f64).ln() / (g2 - gx);
    let n = |t: f64| cascade_populations(g2, gx, t).1;
    let mut best = (0.0, 0.0);
    for i in 0..200_000 {
        let t = i as f64 * 1e-5;
        if n(t) > best.1 {
            best = (t, n(t));
        }
    }
    assert!((best.0 - t_star).abs() < 2e-5, "{} vs {t_star}", best.0);
}

#[test]
fn equal_rates_give_limiting_form() {
    let g = 2.7f64;
    for t in [0.0, 0.1, 0.5, 2.0] {
        let (_, nx) = cascade_populations(g, g, t);
        assert_relative_eq!(nx, g * t * (-g * t).exp(), max_relative = 1e-12, epsilon = 1e-15);
        let (_, near) = cascade_populations(g * (1.0 + 1e-7), g, t);
        assert_relative_eq!(near, g * t * (-g * t).exp(), max_relative = 1e-6, epsilon = 1e-15);
    }
}

/// Closed form of `e^{−γt}Θ(t)` convolved with a unit-area Gaussian.
fn emg_oracle(g: f64, s: f64, t: f64) -> f64 {
    let z = (g * s * s - t) / (s * std::f64::consts::SQRT_2);
    0.5 * (g * g * s * s / 2.0 - g * t).exp() * statrs::function::erf::erfc(z)
}

#[test]
fn numerical_convolution_matches_exponential_gaussian() {
    let (g, s) = (1.0 / 0.294, 0.04);
    let step = s / 50.0;
    let t0 = -0.5;
    let grid: Vec<f64> = (0..3000).map(|i| t0 + i as f64 * step).collect();
    let curve: Vec<f64> = grid
        .iter()
        .map(|&t| {
            let (a, b) = (t - 0.5 * step, t + 0.5 * step);
            if b <= 0.0 {
                0.0
            } else {
                ((-g * a.max(0.0)).exp() - (-g * b).exp()) / (g * step)
            }
        })
        .collect();
    let conv = convolve_irf(&curve, step, s).unwrap();
    for (i, &t) in grid.iter().enumerate().skip(400).take(2000) {
        let exact = emg_oracle(g, s, t);
        assert!((conv[i] - exact).abs() < 1e-4, "t={t}: {} vs {exact}", conv[i]);
        assert!((exp_gaussian(g, s, t) - exact).abs() < 1e-10 * exact.max(1e-300) + 1e-15);
    }
}

#[test]
fn convolution_preserves_integral() {
    let step = 0.002;
    let curve: Vec<f64> = (0..4000)
        .map(|i| {
            let t = i as f64 * step - 1.0;
            if t < 0.0 { 0.0 } else { (-3.0 * t).exp() + 0.3 * (-9.0 * t).exp() }
        })
        .collect();
    let conv = convolve_irf(&curve, step, 0.03).unwrap();
    let (a, b): (f64, f64) = (curve.iter().sum(), conv.iter().sum());
    assert!(((a - b) / a).abs() < 1e-6);
}

#[test]
fn convolution_is_linear() {
    let step = 0.01;
    let f: Vec<f64> = (0..500).map(|i| ((i as f64) * 0.05).sin().abs()).collect();
    let g: Vec<f64> = (0..500).map(|i| (-(i as f64) * 0.01).exp()).collect();
    let sum: Vec<f64> = f.iter().zip(&g).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
    let (cf, cg, cs) = (convolve_irf(&f, step, 0.07).unwrap(), convolve_irf(&g, step, 0.07).unwrap(), convolve_irf(&sum, step, 0.07).unwrap());
    for i in 0..500 {
        assert!((cs[i] - (2.0 * cf[i] - 3.0 * cg[i])).abs() < 1e-12);
    }
}

#[test]
fn gaussian_width_of_convolved_delta() {
    let step = 0.001;
    let mut delta = vec![0.0; 2001];
    delta[1000] = 1.0;
    let out = convolve_irf(&delta, step, 0.05).unwrap();
    let mean: f64 = out.iter().enumerate().map(|(i, v)| i as f64 * step * v).sum();
    let var: f64 = out.iter().enumerate().map(|(i, v)| (i as f64 * step - mean).powi(2) * v).sum();
    assert_relative_eq!(var.sqrt(), 0.05, max_relative = 1e-3);
}

fn truth() -> CascadeParams {
    CascadeParams { gamma_2x: 1.0 / 0.158, gamma_x: 1.0 / 0.294, irf_sigma: 0.04, amplitude: 1.0, offset: 0.2 }
}

fn start(amplitude: f64) -> CascadeParams {
    CascadeParams { gamma_2x: 5.0, gamma_x: 3.0, irf_sigma: 0.06, amplitude, offset: 0.15 }
}

#[test]
fn noiseless_fit_is_self_consistent() {
    let times: Vec<f64> = (0..800).map(|i| i as f64 * 0.004).collect();
    for branch in [Branch::Exciton, Branch::Biexciton] {
        let (clean, amp) = synthetic_decay(&truth(), branch, &times, 1e4, None).unwrap();
        let data: Vec<_> = times.iter().copied().zip(clean.iter().copied()).collect();
        let fit = fit_lifetimes(&data, &start(0.8 * amp), branch, &FitConfig::default()).unwrap();
        let total: f64 = clean.iter().sum();
        let rss: f64 = data.iter().map(|(t, y)| (convolved_model(&fit.params, branch, *t) - y).powi(2)).sum();
        assert!(rss < 1e-10 * total, "{branch:?}: {rss}");
        assert_relative_eq!(fit.params.gamma_2x, truth().gamma_2x, max_relative = 1e-5);
    }
}

#[test]
fn noisy_fits_recover_lifetimes() {
    let times: Vec<f64> = (0..800).map(|i| i as f64 * 0.004).collect();
    for seed in 0..5 {
        for branch in [Branch::Exciton, Branch::Biexciton] {
            let (counts, amp) = synthetic_decay(&truth(), branch, &times, 1e4, Some(seed)).unwrap();
            let data: Vec<_> = times.iter().copied().zip(counts).collect();
            let fit = fit_lifetimes(&data, &start(0.8 * amp), branch, &FitConfig::default()).unwrap();
            let (t2, tx) = fit.params.lifetimes();
            assert!((t2 / 0.158 - 1.0).abs() < 0.02, "{seed} {branch:?} {t2}");
            if branch == Branch::Exciton {
                assert!((tx / 0.294 - 1.0).abs() < 0.02, "{seed} {tx}");
            }
        }
    }
}

#[test]
fn fit_rejects_flat_data() {
    let data: Vec<(f64, f64)> = (0..100).map(|i| (i as f64 * 0.01, 0.0)).collect();
    assert!(fit_lifetimes(&data, &start(10.0), Branch::Exciton, &FitConfig::default()).is_err());
}

#[test]
fn super_gaussian_limits() {
    let f = SuperGaussianFilter { center: 10.0f64, bandwidth: 4.0, order: 1.0 };
    assert_eq!(super_gaussian(10.0, &f), 1.0);
    assert_relative_eq!(super_gaussian(12.0, &f), 0.5, max_relative = 1e-14);
    assert_relative_eq!(super_gaussian(8.0, &f), 0.5, max_relative = 1e-14);
    let flat = SuperGaussianFilter { order: 40.0, ..f };
    assert!((1.0f64 - super_gaussian(10.0 + 0.4 * 4.0, &flat)).abs() < 1e-3);
    assert!(super_gaussian(10.0 + 0.6 * 4.0, &flat) < 1e-3);
}

proptest! {
    #[test]
    fn super_gaussian_even_and_monotone(
        center in -50.0f64..50.0,
        bw in 0.1f64..20.0,
        order in 1.0f64..12.0,
        x in 0.0f64..30.0,
        dx in 0.0f64..5.0,
    ) {
        let f = SuperGaussianFilter { center, bandwidth: bw, order };
        let a = super_gaussian(center + x, &f);
        prop_assert!((a - super_gaussian(center - x, &f)).abs() <= 1e-9);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(super_gaussian(center + x + dx, &f) <= a);
    }

    #[test]
    fn populations_bounded(g2 in 0.1f64..20.0, gx in 0.1f64..20.0, t in 0.0f64..10.0) {
        let (n2, nx) = cascade_populations(g2, gx, t);
        prop_assert!((0.0..=1.0).contains(&n2));
        prop_assert!(nx >= 0.0 && nx + n2 <= 1.0 + 1e-12);
    }
}
