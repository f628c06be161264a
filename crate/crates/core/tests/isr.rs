use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vascmech::config::{IsrConfig, Pooling};
use vascmech::isr::{self, CaseInput, CenterlineProfile, ProfileSample};
use vascmech::stress::{self, SliceStressSummary, WeightedValue};

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3..60usize).prop_flat_map(|n| (prop::collection::vec(-100.0..100.0f64, n), prop::collection::vec(-100.0..100.0f64, n)))
}

fn summaries(rng: &mut ChaCha8Rng, n: usize) -> Vec<SliceStressSummary> {
    let grid = isr::default_tau_grid();
    (0..n)
        .map(|i| {
            let scale = rng.random_range(5.0..60.0);
            let field: Vec<WeightedValue> = (0..200)
                .map(|_| WeightedValue {
                    value: scale * rng.random_range(0.2..2.0),
                    weight: rng.random_range(0.5..1.5),
                })
                .collect();
            stress::summarize_field(i, &field, &grid).unwrap()
        })
        .collect()
}

proptest! {
    #[test]
    fn pearson_affine_invariance((x, y) in pair(), a in 0.01..100.0f64, b in -1e3..1e3f64) {
        let Ok(r) = isr::pearson(&x, &y) else { return Ok(()) };
        let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let xn: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
        prop_assert!((isr::pearson(&xs, &y).unwrap() - r).abs() <= 1e-12);
        prop_assert!((isr::pearson(&xn, &y).unwrap() + r).abs() <= 1e-12);
    }

    #[test]
    fn restenosis_is_scale_invariant(post in 0.5..5.0f64, fu in 0.1..5.0f64, c in 0.1..10.0f64) {
        let a = isr::restenosis_of(post, fu);
        let b = isr::restenosis_of(c * post, c * fu);
        prop_assert!((a - b).abs() <= 1e-10);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn sweep_is_permutation_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sums = summaries(&mut rng, 12);
        let rest: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..60.0)).collect();
        let mut idx: Vec<usize> = (0..12).collect();
        for i in (1..12).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let ps: Vec<_> = idx.iter().map(|&i| sums[i].clone()).collect();
        let pr: Vec<f64> = idx.iter().map(|&i| rest[i]).collect();
        let grid = isr::default_tau_grid();
        let a = isr::threshold_sweep(&sums, &rest, &grid).unwrap();
        let b = isr::threshold_sweep(&ps, &pr, &grid).unwrap();
        let close = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
            (None, None) => true,
            _ => false,
        };
        prop_assert!(close(a.r_mean, b.r_mean) && close(a.r_p95, b.r_p95));
        for (p, q) in a.sweep.iter().zip(&b.sweep) {
            prop_assert!(close(p.1, q.1));
        }
    }
}

#[test]
fn independent_noise_gives_weak_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let sums = summaries(&mut rng, 200);
    let rest: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..60.0)).collect();
    let report = isr::threshold_sweep(&sums, &rest, &isr::default_tau_grid()).unwrap();
    for (tau, r) in &report.sweep {
        if let Some(r) = r {
            assert!(r.abs() < 0.3, "tau {tau}: r = {r}");
        }
    }
}

#[test]
fn constant_column_is_reported_missing() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sums = summaries(&mut rng, 10);
    let rest: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let grid = [1000.0];
    let sums: Vec<_> = sums
        .into_iter()
        .map(|mut s| {
            s.area_fraction_above = vec![(1000.0, 0.0)];
            s
        })
        .collect();
    let report = isr::threshold_sweep(&sums, &rest, &grid).unwrap();
    assert_eq!(report.sweep, vec![(1000.0, None)]);
    assert_eq!(report.argmax_tau, None);
}

fn profile_from(rest: &[f64]) -> CenterlineProfile {
    CenterlineProfile {
        samples: rest
            .iter()
            .enumerate()
            .map(|(i, r)| ProfileSample {
                s: i as f64,
                d_pre: None,
                d_post: Some(3.0),
                d_followup: Some(3.0 * (1.0 - r / 100.0)),
                in_stent: true,
            })
            .collect(),
    }
}

#[test]
fn normalized_pooling_removes_per_case_offsets() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = summaries(&mut rng, 15);
    let b: Vec<_> = a
        .iter()
        .map(|s| SliceStressSummary {
            mean_p1: s.mean_p1 + 100.0,
            p95_p1: s.p95_p1 + 100.0,
            ..s.clone()
        })
        .collect();
    let rest: Vec<f64> = a.iter().map(|s| 0.5 * s.mean_p1).collect();
    let cases = [
        CaseInput { summaries: a, profile: profile_from(&rest) },
        CaseInput { summaries: b, profile: profile_from(&rest) },
    ];
    let cfg = IsrConfig { pooling: Pooling::Normalized, ..IsrConfig::default() };
    let pooled = isr::correlate_cases(&cases, &cfg).unwrap();
    assert!((pooled.report.r_mean.unwrap() - 1.0).abs() < 1e-9);
    assert!(pooled.skipped.is_empty());
    let raw = isr::correlate_cases(&cases, &IsrConfig::default()).unwrap();
    assert!(raw.report.r_mean.unwrap() < 0.9);
}
