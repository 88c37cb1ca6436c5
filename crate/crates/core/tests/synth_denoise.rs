use entn_core::denoise::{filter, quantile, score_events, DEFAULT_QUANTILE};
use entn_core::synth::{describe, generate, ObjectSpec, SceneSpec, Trajectory};
use entn_core::{bin_to_tensor, solve, tensor_density, SolverConfig};
use proptest::prelude::*;

fn mixed_spec(seed: u64) -> SceneSpec {
    SceneSpec {
        rows: 20,
        cols: 24,
        frames: 12,
        duration_us: 120_000,
        noise_per_frame: 1.5,
        seed,
        objects: vec![
            ObjectSpec {
                trajectory: Trajectory::Linear,
                start: [4.0, 4.0],
                velocity: [10.0, 12.0],
                radius: 0.0,
                frequency: 1.0,
                phase: 0.0,
                footprint: 1,
                probability: 0.35,
                label: None,
            },
            ObjectSpec {
                trajectory: Trajectory::Circular,
                start: [10.0, 14.0],
                velocity: [0.0, 0.0],
                radius: 4.0,
                frequency: 2.0,
                phase: 0.5,
                footprint: 0,
                probability: 0.8,
                label: None,
            },
        ],
    }
}

#[test]
fn event_counts_match_closed_form() {
    let summary = describe(&mixed_spec(0));
    let runs = 50;
    let counts: Vec<f64> = (0..runs)
        .map(|s| generate(&mixed_spec(s)).unwrap().len() as f64)
        .collect();
    let mean = counts.iter().sum::<f64>() / runs as f64;
    let tol = 3.0 * summary.event_std / (runs as f64).sqrt();
    assert!(
        (mean - summary.expected_events).abs() <= tol,
        "mean {mean} expected {} tol {tol}",
        summary.expected_events
    );
    assert!(summary.clipped_objects.is_empty());
}

#[test]
fn desk_replica_density_is_in_band() {
    for noise in [0.2, 0.3] {
        for seed in 0..3 {
            let spec = SceneSpec::desk_replica(noise, seed);
            let s = generate(&spec).unwrap();
            let e = bin_to_tensor(&s, spec.frames).unwrap();
            assert_eq!(e.dims(), [64, 48, 60]);
            let d = tensor_density(&e);
            assert!((0.004..=0.008).contains(&d), "density {d}");
        }
    }
}

#[test]
fn median_threshold_on_noisy_scene() {
    let spec = SceneSpec::desk_replica(0.3, 0);
    let s = generate(&spec).unwrap();
    let e = bin_to_tensor(&s, spec.frames).unwrap();
    let (factors, _) = solve(&e.to_tensor(), &SolverConfig::default()).unwrap();
    let scores = score_events(&s, &e, &factors).unwrap();
    let (_, report) = filter(&s, &scores, quantile(&scores, 0.5).unwrap()).unwrap();
    let m = report.metrics.unwrap();
    assert!(m.precision > m.base_rate, "{m:?}");
    // keeping half of a 70%-signal stream caps recall at 0.5 / 0.7
    let ceiling = (report.kept_count as f64) / (m.base_rate * s.len() as f64);
    assert!(m.recall <= ceiling + 1e-12);
    assert!(m.recall > 0.5, "{m:?}");

    let (_, default) = filter(&s, &scores, quantile(&scores, DEFAULT_QUANTILE).unwrap()).unwrap();
    let d = default.metrics.unwrap();
    assert!(d.precision > d.base_rate && d.recall >= 0.7, "{d:?}");
}

proptest! {
    #[test]
    fn raising_threshold_shrinks_kept_set(seed in 0u64..20, t1 in 0.0f64..0.5, dt in 0.0f64..0.5) {
        let spec = mixed_spec(seed);
        let s = generate(&spec).unwrap();
        let scores: Vec<f64> = (0..s.len()).map(|k| ((k as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0).collect();
        let (_, lo) = filter(&s, &scores, t1).unwrap();
        let (_, hi) = filter(&s, &scores, t1 + dt).unwrap();
        for (a, b) in lo.kept.iter().zip(&hi.kept) {
            prop_assert!(!b || *a);
        }
        for r in [&lo, &hi] {
            prop_assert_eq!(r.kept_count + r.removed_count, s.len());
            let m = r.metrics.unwrap();
            prop_assert!((0.0..=1.0).contains(&m.precision) && (0.0..=1.0).contains(&m.recall));
        }
    }
}
