use purity::photostream::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn perfect_source(n_pulses: u64, p: f64) -> StreamConfig {
    StreamConfig { n_pulses, p_single: p, p_double: 0.0, noise_rate: 0.0, ..StreamConfig::default() }
}

fn brute_force(c1: &[i64], c2: &[i64], span: i64) -> u64 {
    let mut n = 0;
    for a in c1 {
        for b in c2 {
            if (b - a).abs() <= span {
                n += 1;
            }
        }
    }
    n
}

#[test]
fn histogram_conserves_brute_force_pairs() {
    for seed in 0..5 {
        let cfg = StreamConfig { noise_rate: 2e6, ..perfect_source(2500, 0.3) };
        let s = synthesize_stream(&cfg, seed).unwrap();
        assert!(s.detector1.len() + s.detector2.len() <= 1000);
        for (bin, span) in [(5, 40_000), (100, 13_100), (7, 1_003)] {
            let h = correlate(&s.detector1, &s.detector2, bin, span).unwrap();
            assert_eq!(h.total(), brute_force(&s.detector1, &s.detector2, span), "seed {seed} bin {bin}");
        }
    }
}

#[test]
fn pairs_land_in_their_delay_bins() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut a: Vec<i64> = (0..300).map(|_| rng.gen_range(0..1_000_000)).collect();
    let mut b: Vec<i64> = (0..300).map(|_| rng.gen_range(0..1_000_000)).collect();
    a.sort_unstable();
    b.sort_unstable();
    let (w, span) = (50, 20_000);
    let h = correlate(&a, &b, w, span).unwrap();
    let mut expect = vec![0u64; h.counts.len()];
    for x in &a {
        for y in &b {
            let d = y - x;
            if d.abs() <= span {
                let i = (0..h.counts.len()).find(|&i| (d - h.delay(i)) * 2 >= -w && (d - h.delay(i)) * 2 < w).unwrap();
                expect[i] += 1;
            }
        }
    }
    assert_eq!(h.counts, expect);
}

#[test]
fn perfect_source_never_double_clicks_in_a_pulse() {
    let cfg = perfect_source(200_000, 1.0);
    let s = synthesize_stream(&cfg, 4).unwrap();
    let period = (cfg.rep_period * PS_PER_NS) as i64;
    let mut all: Vec<i64> = s.detector1.iter().chain(&s.detector2).map(|t| t.div_euclid(period)).collect();
    let n = all.len();
    all.sort_unstable();
    all.dedup();
    assert_eq!(all.len(), n);
    assert_eq!(n as u64, cfg.n_pulses);
}

#[test]
fn noise_count_matches_poisson_expectation() {
    let cfg = StreamConfig { p_single: 0.0, noise_rate: 5e6, ..perfect_source(500_000, 0.0) };
    let s = synthesize_stream(&cfg, 21).unwrap();
    let expected = cfg.noise_rate * cfg.duration() * 1e-9;
    let got = (s.detector1.len() + s.detector2.len()) as f64;
    assert!((got - expected).abs() <= 3.0 * expected.sqrt(), "{got} vs {expected}");
    let (n1, n2) = (s.detector1.len() as f64, s.detector2.len() as f64);
    assert!((n1 - n2).abs() <= 3.0 * got.sqrt(), "{n1} {n2}");
}

#[test]
fn independent_poisson_streams_give_flat_histogram() {
    let cfg = StreamConfig { p_single: 0.0, noise_rate: 2e7, ..perfect_source(2_000_000, 0.0) };
    let s = synthesize_stream(&cfg, 5).unwrap();
    let duration_ps = cfg.duration() * PS_PER_NS;
    let (r1, r2) = (s.detector1.len() as f64 / duration_ps, s.detector2.len() as f64 / duration_ps);
    let (w, span) = (1_000, 50_000);
    let h = correlate(&s.detector1, &s.detector2, w, span).unwrap();
    let mean = r1 * r2 * duration_ps * w as f64;
    let sd = mean.sqrt();
    for (i, c) in h.counts.iter().enumerate().skip(1).take(h.counts.len() - 2) {
        assert!((*c as f64 - mean).abs() < 5.0 * sd, "bin {i}: {c} vs {mean}");
    }
}

#[test]
fn same_seed_same_clicks() {
    let cfg = StreamConfig { p_double: 0.01, noise_rate: 1e5, ..perfect_source(300_000, 0.2) };
    let a = synthesize_stream(&cfg, 77).unwrap();
    let b = synthesize_stream(&cfg, 77).unwrap();
    let c = synthesize_stream(&cfg, 78).unwrap();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    a.write_csv(&mut x).unwrap();
    b.write_csv(&mut y).unwrap();
    assert_eq!(x, y);
    assert_ne!(a, c);
}

#[test]
fn pulsed_source_gives_comb_with_empty_centre() {
    let cfg = perfect_source(1_000_000, 0.2);
    let s = synthesize_stream(&cfg, 1).unwrap();
    let h = correlate(&s.detector1, &s.detector2, 5, 40_000).unwrap();
    let sums = peak_sums(&h, cfg.rep_period, 6.5).unwrap();
    assert_eq!(sums.iter().map(|s| s.0).collect::<Vec<_>>(), vec![-2, -1, 0, 1, 2]);
    assert_eq!(sums[2].1, 0);
    for (k, c) in &sums {
        if *k != 0 {
            assert!(*c > 1000, "{k}: {c}");
        }
    }
    let between: u64 = h
        .counts
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let d = (h.delay(*i) as f64 / PS_PER_NS).rem_euclid(cfg.rep_period);
            d > 4.0 && d < cfg.rep_period - 4.0
        })
        .map(|(_, c)| c)
        .sum();
    assert!((between as f64) < 1e-3 * sums[3].1 as f64);
}

/// Pairs from the same pulse fill the centre; a pulse contributes a photon
/// with probability `p_s + p_d` (the pair branch is taken first).
#[test]
fn estimator_matches_pair_model() {
    let (ps, pd) = (0.15, 0.003);
    let cfg = StreamConfig { n_pulses: 10_000_000, p_single: ps, p_double: pd, ..StreamConfig::default() };
    let s = synthesize_stream(&cfg, 8).unwrap();
    let h = correlate(&s.detector1, &s.detector2, 5, 20_000).unwrap();
    let e = estimate_g2(&h, cfg.rep_period, 6.5, &[]).unwrap();
    let p_any = ps + pd;
    let window_loss = 1.0 - (-3.25 / cfg.emitter_lifetime).exp();
    let centre = 0.5 * pd;
    let side = 0.25 * p_any * p_any * window_loss;
    let oracle = centre / side;
    assert!((e.value - oracle).abs() < 3.0 * e.sigma, "{} ± {} vs {oracle}", e.value, e.sigma);
}

#[test]
fn empty_source_gives_zero_peak_sums() {
    let cfg = perfect_source(10_000, 0.0);
    let s = synthesize_stream(&cfg, 2).unwrap();
    let h = correlate(&s.detector1, &s.detector2, 5, 30_000).unwrap();
    assert!(peak_sums(&h, cfg.rep_period, 6.5).unwrap().iter().all(|(_, c)| *c == 0));
    assert!(estimate_g2(&h, cfg.rep_period, 6.5, &[]).is_err());
}

#[test]
fn efficiency_thins_clicks_binomially() {
    let cfg = StreamConfig { detection_efficiency: 0.25, ..perfect_source(400_000, 0.5) };
    let s = synthesize_stream(&cfg, 13).unwrap();
    let n = (s.detector1.len() + s.detector2.len()) as f64;
    let expected = 400_000.0 * 0.5 * 0.25;
    assert!((n - expected).abs() < 4.0 * expected.sqrt(), "{n}");
}

#[test]
fn blinking_tone_dominates_peak_spectrum() {
    let blink = Blinking { frequencies: vec![2.0], depth: 0.6 };
    let cfg = StreamConfig { blinking: Some(blink), ..perfect_source(2_000_000, 0.3) };
    let s = synthesize_stream(&cfg, 31).unwrap();
    let h = correlate(&s.detector1, &s.detector2, 100, 3_000_000).unwrap();
    let sums = peak_sums(&h, cfg.rep_period, 6.5).unwrap();
    let f = dominant_frequency(&sums, cfg.rep_period).unwrap();
    let resolution = 1e3 / (sums.len() as f64 / 2.0 * cfg.rep_period);
    assert!((f - 2.0).abs() <= resolution, "{f} (resolution {resolution})");
    assert!(!side_peak_flatness(&sums).is_flat());
}

#[test]
fn unmodulated_side_peaks_are_flat() {
    let cfg = perfect_source(1_000_000, 0.3);
    let s = synthesize_stream(&cfg, 44).unwrap();
    let h = correlate(&s.detector1, &s.detector2, 100, 2_000_000).unwrap();
    let flat = side_peak_flatness(&peak_sums(&h, cfg.rep_period, 6.5).unwrap());
    assert!(flat.is_flat(), "{flat:?}");
    assert!(flat.chi2 < flat.dof as f64, "{flat:?}");
}
