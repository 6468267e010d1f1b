use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use zsil_core::learner::{
    argmax, parse_backbone, ConfusionMatrix, Heads, Learner, LearnerConfig, OutputScope,
};
use zsil_core::recovery::{
    export_transfer_set, generate_target_outputs, per_class_counts, read_tensor_file,
    recover_transfer_set, InversionConfig, RecoveryConfig,
};
use zsil_core::Error;

fn learner(heads: Heads, tasks: &[&[usize]]) -> Learner {
    let mut l = Learner::build(LearnerConfig {
        input_shape: [1, 4, 4],
        backbone: parse_backbone("flatten,dense:8,relu").unwrap(),
        heads,
        seed: 3,
    })
    .unwrap();
    for t in tasks {
        l.begin_task(t).unwrap();
    }
    l
}

/// Mostly-correct confusion rows with some mass off the diagonal.
fn confusion(classes: &[usize]) -> ConfusionMatrix {
    let k = classes.len();
    let counts = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| if i == j { 40 } else { (i + 2 * j) as u64 % 5 })
                .collect()
        })
        .collect();
    ConfusionMatrix::from_counts(classes.to_vec(), counts).unwrap()
}

fn config(k: usize, seed: u64) -> RecoveryConfig {
    RecoveryConfig {
        transfer_size: k,
        seed,
        inversion: InversionConfig {
            max_steps: 40,
            ..InversionConfig::default()
        },
        ..RecoveryConfig::default()
    }
}

#[test]
fn targets_respect_class_scope_and_constraint() {
    for (heads, tasks) in [
        (Heads::Single(6), vec![&[0usize, 1][..], &[2, 3], &[4, 5]]),
        (
            Heads::Multi(vec![2, 2, 2]),
            vec![&[0usize, 1][..], &[2, 3], &[4, 5]],
        ),
    ] {
        let l = learner(heads, &tasks);
        let cm = confusion(l.classes_seen());
        let cfg = RecoveryConfig {
            eta: 0.45,
            ..config(1000, 0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (targets, stats) = generate_target_outputs(&l, &cm, &cfg, &mut rng).unwrap();
        assert_eq!(targets.len(), 1000);
        assert_eq!(stats.accepted + stats.fallbacks, 1000);

        let mut per_class = std::collections::BTreeMap::new();
        for t in &targets {
            *per_class.entry(t.class_id).or_insert(0) += 1;
            let block = l.scope_classes(t.scope).unwrap();
            assert_eq!(t.scope, l.scope_of(t.class_id).unwrap());
            assert_eq!(t.vector.len(), block.len());
            assert!((t.vector.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(block[argmax(&t.vector)], t.class_id);
            let gamma = cm.restricted_row(t.class_id, &block).unwrap();
            let d: f64 = t
                .vector
                .iter()
                .zip(&gamma)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            assert!((d - t.distance).abs() < 1e-12);
            if !t.fallback {
                assert!(d < cfg.eta);
            }
        }
        let expected: std::collections::BTreeMap<usize, usize> =
            per_class_counts(1000, l.classes_seen())
                .into_iter()
                .collect();
        assert_eq!(per_class, expected);
        for b in [1.0, 0.1] {
            let n = targets.iter().filter(|t| t.beta == b).count();
            assert!(n.abs_diff(500) <= 6, "beta {b}: {n}");
        }
    }
}

#[test]
fn loose_threshold_accepts_everything_and_tight_one_falls_back() {
    let l = learner(Heads::Single(4), &[&[0, 1, 2, 3]]);
    let cm = confusion(l.classes_seen());
    let loose = RecoveryConfig {
        eta: 1e9,
        ..config(200, 0)
    };
    let (targets, stats) =
        generate_target_outputs(&l, &cm, &loose, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(stats.fallbacks, 0);
    assert!(targets.iter().all(|t| !t.fallback));
    // Rejections come only from a wrong argmax.
    assert!(stats.accepted == 200);

    let tight = RecoveryConfig {
        eta: 1e-12,
        max_resample: 5,
        ..config(40, 0)
    };
    let (targets, stats) =
        generate_target_outputs(&l, &cm, &tight, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(stats.fallbacks, 40);
    assert_eq!(stats.accepted, 0);
    assert_eq!(stats.rejected, 200);
    for t in &targets {
        assert!(t.fallback);
        assert_eq!(argmax(&t.vector), t.class_id);
    }
}

#[test]
fn recovery_reads_the_learner_without_changing_it() {
    let l = learner(Heads::Single(4), &[&[0, 1], &[2, 3]]);
    let before = l.checksum();
    let cm = confusion(l.classes_seen());
    let set = recover_transfer_set(&l, &cm, &config(24, 5)).unwrap();
    assert_eq!(l.checksum(), before);
    assert_eq!(set.len() + set.aborted, 24);
    let expected: std::collections::BTreeMap<usize, usize> =
        per_class_counts(24, &[0, 1, 2, 3]).into_iter().collect();
    assert_eq!(set.histogram(), expected);
    for s in &set.samples {
        assert_eq!(s.image.len(), 16);
        assert!(s.image.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(s.final_loss <= s.initial_loss);
        assert!(s.iterations <= 40);
        assert_eq!(s.label, s.target.class_id);
    }
}

#[test]
fn recovery_is_deterministic_per_seed() {
    let l = learner(Heads::Multi(vec![2, 2]), &[&[0, 1], &[2, 3]]);
    let cm = confusion(l.classes_seen());
    let a = recover_transfer_set(&l, &cm, &config(20, 7)).unwrap();
    let b = recover_transfer_set(&l, &cm, &config(20, 7)).unwrap();
    let c = recover_transfer_set(&l, &cm, &config(20, 8)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    for s in &a.samples {
        assert_eq!(
            s.target.scope,
            OutputScope::Head(l.task_of(s.label).unwrap())
        );
    }
}

#[test]
fn empty_transfer_size_gives_an_empty_set() {
    let l = learner(Heads::Single(2), &[&[0, 1]]);
    let cm = confusion(l.classes_seen());
    let set = recover_transfer_set(&l, &cm, &config(0, 0)).unwrap();
    assert!(set.is_empty());
    assert_eq!(set.aborted, 0);
}

#[test]
fn recovery_needs_a_learned_class_and_a_valid_config() {
    let empty = learner(Heads::Single(2), &[]);
    let cm = confusion(&[0, 1]);
    let err = recover_transfer_set(&empty, &cm, &config(4, 0)).unwrap_err();
    assert!(matches!(err, Error::InvalidState(_)), "{err}");

    let l = learner(Heads::Single(2), &[&[0, 1]]);
    for bad in [
        RecoveryConfig {
            eta: 0.0,
            ..config(4, 0)
        },
        RecoveryConfig {
            tau: -1.0,
            ..config(4, 0)
        },
        RecoveryConfig {
            max_resample: 0,
            ..config(4, 0)
        },
        RecoveryConfig {
            beta_schedule: vec![],
            ..config(4, 0)
        },
    ] {
        assert!(recover_transfer_set(&l, &cm, &bad).is_err());
    }
}

#[test]
fn export_writes_images_and_a_manifest() {
    let l = learner(Heads::Single(3), &[&[0, 1, 2]]);
    let cm = confusion(l.classes_seen());
    let set = recover_transfer_set(&l, &cm, &config(6, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_transfer_set(&set, dir.path()).unwrap();
    for (i, s) in set.samples.iter().enumerate() {
        let t = read_tensor_file(&dir.path().join(format!("sample_{i:06}.bin"))).unwrap();
        assert_eq!(t.shape(), &[1, 4, 4]);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(t.data()), bits(&s.image));
    }
    let mut rows = csv::Reader::from_path(dir.path().join("manifest.csv")).unwrap();
    let header: Vec<String> = rows.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        [
            "sample_id",
            "class_id",
            "target",
            "final_loss",
            "iterations"
        ]
    );
    let labels: Vec<usize> = rows
        .records()
        .map(|r| r.unwrap()[1].parse().unwrap())
        .collect();
    assert_eq!(
        labels,
        set.samples.iter().map(|s| s.label).collect::<Vec<_>>()
    );
}
