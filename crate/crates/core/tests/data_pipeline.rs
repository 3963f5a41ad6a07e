mod common;

use common::spectral_probe_accuracy;
use dggn_core::data::{
    build_schedule, export_csv, generate_synthetic, ingest_csv, make_views, parse_csv, render_csv,
    segment_shuffle_augment, Budget, DatasetKind, GeneratorSpec, ScheduleConfig, SignalSample, SplitMode,
};
use dggn_core::DggnError;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(c: usize, l: usize, seed: u64) -> SignalSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..c * l).map(|_| rng.gen_range(-3.0..3.0)).collect();
    SignalSample::new(c, l, v, 3, seed).unwrap()
}

#[test]
fn zero_noise_single_sinusoid_class_is_constant() {
    let spec = GeneratorSpec {
        n_channels: 4,
        length: 32,
        n_classes: 3,
        noise_level: 0.0,
        shared_drift_amp: 0.0,
        components_per_class: 1,
        ..GeneratorSpec::tep_like()
    };
    let s = generate_synthetic(&spec, 2, 6, 11).unwrap();
    for other in &s[1..] {
        assert_eq!(other.values(), s[0].values());
        assert_eq!(other.label, 2);
    }
}

#[test]
fn generator_is_deterministic_and_seed_sensitive() {
    let spec = GeneratorSpec::tep_like();
    let a = generate_synthetic(&spec, 4, 5, 99).unwrap();
    let b = generate_synthetic(&spec, 4, 5, 99).unwrap();
    assert_eq!(a, b);
    let c = generate_synthetic(&spec, 4, 5, 100).unwrap();
    assert_ne!(a[0].values(), c[0].values());
}

#[test]
fn generator_rejects_bad_requests() {
    let spec = GeneratorSpec::tep_like();
    assert!(matches!(generate_synthetic(&spec, 10, 1, 0), Err(DggnError::Domain(_))));
    assert!(generate_synthetic(&spec, 0, 0, 0).is_err());
}

#[test]
fn linear_probe_on_spectral_energy_separates_classes() {
    let spec = GeneratorSpec::tep_like();
    assert_eq!((spec.n_channels, spec.length, spec.n_classes), (52, 128, 10));
    let (mut train, mut test) = (vec![], vec![]);
    for c in 0..spec.n_classes {
        train.extend(generate_synthetic(&spec, c, 30, 1).unwrap());
        test.extend(generate_synthetic(&spec, c, 30, 2).unwrap());
    }
    let acc = spectral_probe_accuracy(&train.iter().collect::<Vec<_>>(), &test.iter().collect::<Vec<_>>());
    println!("spectral linear probe accuracy: {acc:.4}");
    assert!(acc > 0.95, "probe accuracy {acc}");
}

#[test]
fn csv_round_trip_through_file() {
    let samples: Vec<SignalSample> = (0..4)
        .map(|i| {
            let mut s = sample(3, 5, i);
            s.sample_id = i;
            s
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.csv");
    export_csv(&samples, (3, 5), &path).unwrap();
    let back = ingest_csv(&path).unwrap();
    assert_eq!(back, samples);
}

#[test]
fn csv_header_only_and_fixture() {
    assert!(parse_csv("label,c0_t0,c0_t1\n").unwrap().is_empty());
    let text = "label,c0_t0,c0_t1,c0_t2,c0_t3,c1_t0,c1_t1,c1_t2,c1_t3\n\
                0,1,2,3,4,5,6,7,8\n\
                2,0.5,0.5,0.5,0.5,-1,-1,-1,-1\n\
                1,1e-3,2,3,4,5,6,7,8.25\n";
    let s = parse_csv(text).unwrap();
    assert_eq!(s.len(), 3);
    assert_eq!(s.iter().map(|s| s.label).collect::<Vec<_>>(), vec![0, 2, 1]);
    assert_eq!((s[0].channels(), s[0].len()), (2, 4));
    assert_eq!(s[0].channel(1), &[5.0, 6.0, 7.0, 8.0]);
    assert_eq!(s[2].channel(1)[3], 8.25);
    let rendered = render_csv(&s, (2, 4)).unwrap();
    assert_eq!(parse_csv(&rendered).unwrap(), s);
}

#[test]
fn csv_errors_name_the_line() {
    let head = "label,c0_t0,c0_t1\n";
    for (body, line) in [("0,1,2\n1,2\n", 3), ("0,1,NaN\n", 2), ("0,1,inf\n", 2), (",1,2\n", 2), ("x,1,2\n", 2)] {
        match parse_csv(&format!("{head}{body}")) {
            Err(DggnError::Parse { line: l, .. }) => assert_eq!(l, line, "{body:?}"),
            other => panic!("{body:?}: {other:?}"),
        }
    }
    assert!(matches!(parse_csv("c0_t0,c0_t1\n1,2\n"), Err(DggnError::Parse { line: 1, .. })));
}

#[test]
fn schedule_two_by_five_and_single_session() {
    let ids: Vec<usize> = (0..10).collect();
    let s = build_schedule(&ids, &[2, 2, 2, 2, 2], SplitMode::Imbalanced).unwrap();
    assert_eq!(s.len(), 5);
    assert_eq!(s.cumulative_classes(4).len(), 10);
    for t1 in 0..5 {
        for t2 in 0..5 {
            if t1 != t2 {
                assert!(s.sessions[t1].classes.iter().all(|c| !s.sessions[t2].classes.contains(c)));
            }
        }
    }
    let single = build_schedule(&ids, &[10], SplitMode::Imbalanced).unwrap();
    assert_eq!(single.len(), 1);
    assert!(build_schedule(&[0, 1, 1, 2], &[2, 2], SplitMode::Imbalanced).is_err());
    assert!(build_schedule(&ids, &[3, 3], SplitMode::Imbalanced).is_err());
}

#[test]
fn budgets_follow_the_table() {
    let tep_i = Budget::standard(DatasetKind::Tep, SplitMode::Imbalanced);
    let tep_l = Budget::standard(DatasetKind::Tep, SplitMode::LongTailed);
    let mff_i = Budget::standard(DatasetKind::Mff, SplitMode::Imbalanced);
    let mff_l = Budget::standard(DatasetKind::Mff, SplitMode::LongTailed);
    assert_eq!((tep_i.normal_train, tep_i.fault_train, tep_i.test_per_class), (500, 48, 800));
    assert_eq!((tep_l.normal_train, tep_l.fault_train), (500, 20));
    assert_eq!((mff_i.normal_train, mff_i.fault_train, mff_i.test_per_class), (200, 10, 800));
    assert_eq!((mff_l.normal_train, mff_l.fault_train), (200, 5));

    let s = ScheduleConfig::tep(10, vec![2, 2, 2, 2, 2], SplitMode::LongTailed).build().unwrap();
    assert_eq!(s.train_count(0), Some(500));
    for c in 1..10 {
        assert_eq!(s.train_count(c), Some(20));
    }
    assert_eq!(s.test_per_class, 800);
}

#[test]
fn unit_segment_leaves_sample_unchanged() {
    let s = sample(3, 20, 1);
    // ceil(0.01 * 20) = 1
    assert_eq!(segment_shuffle_augment(&s, 0.01, 5).unwrap(), s);
    let v = make_views(&[&s], 0.01, 5).unwrap();
    assert_eq!(v.samples, vec![s.clone(), s]);
}

#[test]
fn segment_shuffle_replays_seeded_draw() {
    let values: Vec<f64> = (0..16).map(|v| v as f64).collect();
    let s = SignalSample::new(2, 8, values, 1, 0).unwrap();
    for seed in 0..20 {
        let out = segment_shuffle_augment(&s, 0.5, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offset = rng.gen_range(0..=4usize);
        let mut perm: Vec<usize> = (0..4).collect();
        perm.shuffle(&mut rng);
        for c in 0..2 {
            for t in 0..8 {
                let want = if (offset..offset + 4).contains(&t) {
                    (c * 8 + offset + perm[t - offset]) as f64
                } else {
                    (c * 8 + t) as f64
                };
                assert_eq!(out.channel(c)[t], want, "seed {seed} c {c} t {t}");
            }
        }
    }
}

#[test]
fn views_pair_origins_and_labels() {
    let a = sample(2, 10, 1);
    let mut b = sample(2, 10, 2);
    b.label = 7;
    let v = make_views(&[&a, &b], 0.3, 9).unwrap();
    assert_eq!(v.len(), 4);
    assert_eq!(v.origin, vec![0, 0, 1, 1]);
    assert_eq!(v.labels(), vec![3, 3, 7, 7]);
    let w = make_views(&[&a, &b], 0.3, 9).unwrap();
    assert_eq!(v.samples, w.samples);
    assert!(make_views(&[], 0.3, 9).is_err());
}

proptest! {
    #[test]
    fn augmentation_preserves_channel_multisets(seed in any::<u64>(), frac in 0.01f64..=1.0, c in 1usize..4, l in 1usize..40) {
        let s = sample(c, l, seed ^ 0x55);
        let out = segment_shuffle_augment(&s, frac, seed).unwrap();
        prop_assert_eq!(out.label, s.label);
        let seg = ((frac * l as f64).ceil() as usize).clamp(1, l);
        let mut changed = Vec::new();
        for ch in 0..c {
            let mut a = s.channel(ch).to_vec();
            let mut b = out.channel(ch).to_vec();
            for t in 0..l {
                if a[t] != b[t] {
                    changed.push(t);
                }
            }
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }
        if let (Some(lo), Some(hi)) = (changed.iter().min(), changed.iter().max()) {
            prop_assert!(hi - lo < seg);
        }
    }
}
