use std::f64::consts::PI;

use e3_codec::{Iq, IqFrame};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use spectrum_dapp::{fft, sense, Complex, SensingConfig, Sensor};

/// O(N^2) reference with exactly reduced phase indices.
fn naive_dft(x: &[Complex]) -> Vec<Complex> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in x.iter().enumerate() {
                let angle = -2.0 * PI * ((k * j) % n) as f64 / n as f64;
                let (s, c) = angle.sin_cos();
                re += v.re * c - v.im * s;
                im += v.re * s + v.im * c;
            }
            Complex::new(re, im)
        })
        .collect()
}

fn random_signal(n: usize, seed: u64) -> Vec<Complex> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

fn rel_err(got: &[Complex], want: &[Complex]) -> f64 {
    let num: f64 = got
        .iter()
        .zip(want)
        .map(|(a, b)| (*a - *b).norm_sqr())
        .sum();
    let den: f64 = want.iter().map(|c| c.norm_sqr()).sum();
    (num / den).sqrt()
}

#[test]
fn fft_matches_naive_dft() {
    for n in [64, 256, 1024] {
        for seed in 0..4 {
            let x = random_signal(n, seed);
            let err = rel_err(&fft(&x).unwrap(), &naive_dft(&x));
            assert!(err < 1e-9, "n={n} seed={seed} err={err:e}");
        }
    }
}

#[test]
fn parseval_holds() {
    for log2 in 0..=12 {
        let n = 1usize << log2;
        let x = random_signal(n, 100 + log2 as u64);
        let time: f64 = x.iter().map(|c| c.norm_sqr()).sum();
        let freq: f64 = fft(&x).unwrap().iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
        assert!(((time - freq) / time).abs() < 1e-9, "n={n}");
    }
}

fn cfg(fft_size: u32, n_prb: u16) -> SensingConfig {
    SensingConfig {
        fft_size,
        n_prb,
        ..SensingConfig::default()
    }
}

/// Frame with tones centred in `prbs` plus complex Gaussian noise.
fn tone_frame(
    fft_size: usize,
    n_prb: usize,
    prbs: &[usize],
    amplitude: f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> IqFrame {
    let b = fft_size / n_prb;
    let noise = Normal::new(0.0, sigma).unwrap();
    let samples = (0..fft_size)
        .map(|n| {
            let (mut i, mut q) = if sigma > 0.0 {
                (noise.sample(rng), noise.sample(rng))
            } else {
                (0.0, 0.0)
            };
            for &p in prbs {
                let bin = p * b + b / 2;
                let angle = 2.0 * PI * ((bin * n) % fft_size) as f64 / fft_size as f64;
                i += amplitude * angle.cos();
                q += amplitude * angle.sin();
            }
            Iq::new(i as f32, q as f32)
        })
        .collect();
    IqFrame::new(samples)
}

/// Per-PRB energies straight from the naive DFT.
fn oracle_energies(frame: &IqFrame, n_prb: usize) -> Vec<f64> {
    let x: Vec<Complex> = frame
        .samples
        .iter()
        .map(|s| Complex::new(s.i.into(), s.q.into()))
        .collect();
    let spec = naive_dft(&x);
    let b = x.len() / n_prb;
    spec.chunks(b)
        .map(|c| c.iter().map(|v| v.norm_sqr()).sum::<f64>() / b as f64)
        .collect()
}

#[test]
fn energies_match_oracle_and_tone_lands_in_prb() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sigma = (1.0f64 / 200.0).sqrt();
    let frame = tone_frame(1024, 64, &[6], 1.0, sigma, &mut rng);
    let want = oracle_energies(&frame, 64);
    let got = Sensor::new(&cfg(1024, 64)).unwrap().energies(&frame).unwrap();
    for (g, w) in got.energies.iter().zip(&want) {
        assert!((g - w).abs() <= 1e-9 * w.abs().max(1.0));
    }
    let (argmax, _) = want
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    assert_eq!(argmax, 6);
    assert_eq!(sense(&frame, &cfg(1024, 64)).unwrap().blocked().collect::<Vec<_>>(), vec![6]);
}

#[test]
fn noiseless_single_incumbent_is_exact_for_every_prb() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (size, n_prb) in [(1024usize, 64usize), (256, 16), (64, 64)] {
        let mut sensor = Sensor::new(&cfg(size as u32, n_prb as u16)).unwrap();
        for p in 0..n_prb {
            for amp in [1.0, 0.01, 1000.0] {
                let frame = tone_frame(size, n_prb, &[p], amp, 0.0, &mut rng);
                let got: Vec<u16> = sensor.sense(&frame).unwrap().blocked().collect();
                assert_eq!(got, vec![p as u16], "size={size} n_prb={n_prb} prb={p} amp={amp}");
            }
        }
    }
}

#[test]
fn two_incumbents_at_20_db() {
    let sigma = (1.0f64 / 200.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut sensor = Sensor::new(&cfg(1024, 64)).unwrap();
    let hits = (0..100)
        .filter(|_| {
            let frame = tone_frame(1024, 64, &[3, 40], 1.0, sigma, &mut rng);
            sensor.sense(&frame).unwrap().blocked().eq([3, 40])
        })
        .count();
    assert!(hits >= 99, "{hits}/100");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raising_threshold_never_adds_prbs(
        seed in any::<u64>(),
        prbs in proptest::collection::btree_set(0usize..64, 0..6),
        amp in 0.0f64..4.0,
        lo in 0.1f64..20.0,
        delta in 0.0f64..20.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prbs: Vec<usize> = prbs.into_iter().collect();
        let frame = tone_frame(1024, 64, &prbs, amp, 0.1, &mut rng);
        let map = Sensor::new(&cfg(1024, 64)).unwrap().energies(&frame).unwrap();
        let low = map.detect(lo);
        let high = map.detect(lo + delta);
        prop_assert!(high.iter().all(|p| low.contains(p)));
    }

    #[test]
    fn fft_parseval_random_sizes(log2 in 0u32..=10, seed in any::<u64>()) {
        let n = 1usize << log2;
        let x = random_signal(n, seed);
        let time: f64 = x.iter().map(|c| c.norm_sqr()).sum();
        let freq: f64 = fft(&x).unwrap().iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
        prop_assert!(((time - freq) / time).abs() < 1e-9);
    }
}
