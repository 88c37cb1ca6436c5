use entn_core::eval::{
    auc, temporal_split, train_svm, FeatureMatrix, FeatureRow, Split, SvmConfig,
};
use entn_core::{bin_to_tensor, Event, EventStream, Geometry};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn events_strategy() -> impl Strategy<Value = (Vec<(usize, usize, u64)>, usize)> {
    (
        prop::collection::vec((0usize..4, 0usize..5, 0u64..500), 1..60),
        1usize..8,
    )
}

fn stream_of(raw: &[(usize, usize, u64)]) -> EventStream {
    let events = raw.iter().map(|&(i, j, t)| Event::new(i, j, t)).collect();
    EventStream::new(events, Geometry::new(4, 5)).unwrap()
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice = 0u64;
    let mut pairs = 0u64;
    for (a, &la) in scores.iter().zip(labels) {
        for (b, &lb) in scores.iter().zip(labels) {
            if la && !lb {
                pairs += 1;
                twice += match a.partial_cmp(b).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((0u8..12, any::<bool>()), 2..120)
        .prop_filter("both classes", |v| {
            v.iter().any(|x| x.1) && v.iter().any(|x| !x.1)
        })
        .prop_map(|v| {
            let scores = v.iter().map(|x| f64::from(x.0) / 4.0).collect();
            let labels = v.iter().map(|x| x.1).collect();
            (scores, labels)
        })
}

proptest! {
    #[test]
    fn binarization_marks_exactly_the_event_cells((raw, n) in events_strategy()) {
        let s = stream_of(&raw);
        let e = bin_to_tensor(&s, n).unwrap();
        let mut cells = std::collections::BTreeSet::new();
        for ev in s.events() {
            let c = e.locate(ev).unwrap();
            prop_assert_eq!(e.get(c.0, c.1, c.2), 1);
            cells.insert(c);
        }
        prop_assert_eq!(e.ones(), cells.len());
        prop_assert!(e.ones() <= s.len());
    }

    #[test]
    fn binarization_ignores_duplicates_and_order((raw, n) in events_strategy(), seed in any::<u64>()) {
        let base = bin_to_tensor(&stream_of(&raw), n).unwrap();
        let mut doubled = raw.clone();
        doubled.extend_from_slice(&raw);
        doubled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        // keep the same time window as the original stream
        let s = stream_of(&raw);
        let events = doubled.iter().map(|&(i, j, t)| Event::new(i, j, t)).collect();
        let shuffled = EventStream::with_range(events, s.geometry(), s.t_min(), s.t_max()).unwrap();
        prop_assert_eq!(bin_to_tensor(&shuffled, n).unwrap(), base);
    }

    #[test]
    fn sort_auc_equals_brute_force((scores, labels) in scored_labels()) {
        prop_assert_eq!(auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
    }

    #[test]
    fn auc_ignores_monotone_transforms((scores, labels) in scored_labels()) {
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auc(&warped, &labels).unwrap(), auc(&scores, &labels).unwrap());
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        let sum = auc(&flipped, &labels).unwrap() + auc(&scores, &labels).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_is_label_blind(frames in 2usize..80, rows in prop::collection::vec((0usize..80, -1i64..3), 1..50), seed in any::<u64>()) {
        let make = |labels: &[i64]| FeatureMatrix {
            rows: rows
                .iter()
                .zip(labels)
                .map(|(&(n, _), &label)| FeatureRow { i: 0, j: 0, n: n % frames, label, features: vec![0.0], split: None })
                .collect(),
            width: 1,
            frames,
        };
        let labels: Vec<i64> = rows.iter().map(|r| r.1).collect();
        let mut permuted = labels.clone();
        permuted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = temporal_split(make(&labels), 0.6);
        let b = temporal_split(make(&permuted), 0.6);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                let cutoff = entn_core::eval::train_frames(frames, 0.6);
                for (ra, rb) in a.rows.iter().zip(&b.rows) {
                    prop_assert_eq!(ra.split, rb.split);
                    let want = if ra.n < cutoff { Split::Train } else { Split::Test };
                    prop_assert_eq!(ra.split, Some(want));
                }
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "split outcome depended on labels"),
        }
    }
}

#[test]
fn svm_on_noise_labels_stays_near_chance() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> (Vec<Vec<f64>>, Vec<bool>) {
            let x = (0..n)
                .map(|_| (0..12).map(|_| rng.random::<f64>()).collect())
                .collect();
            let y = (0..n).map(|_| rng.random::<bool>()).collect();
            (x, y)
        };
        let (tx, ty) = draw(600);
        let (vx, vy) = draw(400);
        let model = train_svm(
            &tx,
            &ty,
            &SvmConfig {
                seed,
                ..SvmConfig::default()
            },
        )
        .unwrap();
        let scores: Vec<f64> = vx.iter().map(|x| model.decision(x)).collect();
        let a = auc(&scores, &vy).unwrap();
        assert!((0.35..=0.65).contains(&a), "seed {seed}: AUC {a}");
    }
}
