use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zsil_core::learner::{
    argmax, parse_backbone, read_checkpoint, rebuild_confusion_matrix, write_checkpoint,
    ConfusionMatrix, Heads, Learner, LearnerConfig, OutputScope,
};
use zsil_core::tasks::{LabeledDataset, Split};
use zsil_core::{Error, Tensor};

fn build(backbone: &str, heads: Heads, seed: u64) -> Learner {
    Learner::build(LearnerConfig {
        input_shape: [1, 4, 4],
        backbone: parse_backbone(backbone).unwrap(),
        heads,
        seed,
    })
    .unwrap()
}

fn images(seed: u64, n: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(
        vec![n, 1, 4, 4],
        (0..n * 16).map(|_| rng.random()).collect(),
    )
    .unwrap()
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn same_seed_gives_bitwise_identical_parameters() {
    let a = build(
        "conv:3:3,relu,avgpool:2,flatten,dense:8,relu",
        Heads::Single(5),
        42,
    );
    let b = build(
        "conv:3:3,relu,avgpool:2,flatten,dense:8,relu",
        Heads::Single(5),
        42,
    );
    let c = build(
        "conv:3:3,relu,avgpool:2,flatten,dense:8,relu",
        Heads::Single(5),
        43,
    );
    for (name, t) in a.params() {
        assert_eq!(bits(t), bits(b.param(name).unwrap()), "{name}");
    }
    assert_eq!(a.checksum(), b.checksum());
    assert_ne!(a.checksum(), c.checksum());
}

#[test]
fn head_widths_follow_the_head_layout() {
    let mut multi = build("flatten,dense:6,relu", Heads::Multi(vec![2, 3]), 1);
    multi.begin_task(&[7, 4]).unwrap();
    multi.begin_task(&[0, 1, 9]).unwrap();
    let x = images(1, 3);
    assert_eq!(multi.predict_logits(&x, Some(0)).unwrap().shape(), &[3, 2]);
    assert_eq!(multi.predict_logits(&x, Some(1)).unwrap().shape(), &[3, 3]);
    assert_eq!(multi.seen_logits(&x).unwrap().shape(), &[3, 5]);
    assert_eq!(
        multi.scope_classes(OutputScope::Head(0)).unwrap(),
        vec![4, 7]
    );

    let mut single = build("flatten,dense:6,relu", Heads::Single(10), 1);
    single.begin_task(&[3, 8]).unwrap();
    assert_eq!(single.predict_logits(&x, None).unwrap().shape(), &[3, 10]);
    assert_eq!(single.seen_logits(&x).unwrap().shape(), &[3, 2]);
}

#[test]
fn zero_weights_give_bias_logits() {
    let mut l = build("flatten,dense:6,relu", Heads::Single(3), 9);
    l.begin_task(&[0, 1, 2]).unwrap();
    for name in l
        .param_names()
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
    {
        let t = l.param(&name).unwrap();
        let value = if name == "head.0.bias" {
            Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap()
        } else {
            Tensor::zeros(t.shape())
        };
        l.set_param(&name, value).unwrap();
    }
    let z = l.predict_logits(&images(3, 4), None).unwrap();
    for r in 0..4 {
        assert_eq!(z.row(r), &[0.5, -1.0, 2.0]);
    }
}

#[test]
fn perturbing_one_head_leaves_the_others_alone() {
    let mut l = build("flatten,dense:6,relu", Heads::Multi(vec![2, 2]), 5);
    l.begin_task(&[0, 1]).unwrap();
    l.begin_task(&[2, 3]).unwrap();
    let x = images(4, 5);
    let before = l.predict_logits(&x, Some(1)).unwrap();
    let shape = l.param("head.0.weight").unwrap().shape().to_vec();
    let n = shape.iter().product();
    l.set_param("head.0.weight", Tensor::new(shape, vec![7.0; n]).unwrap())
        .unwrap();
    l.set_param(
        "head.0.bias",
        Tensor::new(vec![2], vec![-3.0, 3.0]).unwrap(),
    )
    .unwrap();
    assert_eq!(bits(&before), bits(&l.predict_logits(&x, Some(1)).unwrap()));
    assert_ne!(
        bits(&before),
        bits(&l.predict_logits(&x, Some(0)).unwrap()),
        "sanity: head 0 did change"
    );
}

#[test]
fn prediction_errors() {
    let single = build("flatten,dense:4,relu", Heads::Single(2), 0);
    assert!(matches!(
        single.seen_logits(&images(0, 1)),
        Err(Error::InvalidState(_))
    ));
    assert!(single.predict_logits(&images(0, 1), Some(0)).is_err());
    let multi = build("flatten,dense:4,relu", Heads::Multi(vec![2]), 0);
    assert!(multi.predict_logits(&images(0, 1), None).is_err());
    assert!(multi.predict_logits(&images(0, 1), Some(1)).is_err());
    let wrong = Tensor::zeros(&[1, 1, 5, 4]);
    assert!(single.predict_logits(&wrong, None).is_err());
}

#[test]
fn begin_task_rejects_overlap_and_overflow() {
    let mut l = build("flatten,dense:4,relu", Heads::Single(4), 0);
    l.begin_task(&[0, 1]).unwrap();
    assert!(l.begin_task(&[1, 2]).is_err());
    assert!(l.begin_task(&[4]).is_err());
    let mut m = build("flatten,dense:4,relu", Heads::Multi(vec![2]), 0);
    assert!(m.begin_task(&[0, 1, 2]).is_err());
    m.begin_task(&[0, 1]).unwrap();
    assert!(m.begin_task(&[2, 3]).is_err());
}

/// Direct recount of predictions over the seen classes, independent of the
/// batched implementation.
fn brute_force_confusion(l: &Learner, data: &LabeledDataset) -> Vec<Vec<u64>> {
    let seen = l.classes_seen().to_vec();
    let mut counts = vec![vec![0u64; seen.len()]; seen.len()];
    for i in 0..data.len() {
        let y = data.label(i);
        let x = Tensor::new(vec![1, 4, 4], data.image(i).to_vec()).unwrap();
        let pred = if l.is_multi_head() {
            let t = l.task_of(y).unwrap();
            let z = l.predict_logits(&x, Some(t)).unwrap();
            l.task_classes()[t][argmax(z.data())]
        } else {
            let z = l.predict_logits(&x, None).unwrap();
            let scores: Vec<f64> = seen.iter().map(|&c| z.data()[c]).collect();
            seen[argmax(&scores)]
        };
        let yi = seen.iter().position(|&c| c == y).unwrap();
        let pi = seen.iter().position(|&c| c == pred).unwrap();
        counts[yi][pi] += 1;
    }
    counts
}

fn labeled(seed: u64, labels: &[usize]) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let imgs = labels
        .iter()
        .map(|_| (0..16).map(|_| rng.random::<f64>()).collect::<Arc<[f64]>>())
        .collect();
    LabeledDataset::new([1, 4, 4], imgs, labels.to_vec(), Split::Train).unwrap()
}

#[test]
fn confusion_matrix_matches_a_direct_recount() {
    let labels: Vec<usize> = (0..60).map(|i| [0, 1, 2, 3][i % 4]).collect();
    let data = labeled(11, &labels);

    let mut single = build("flatten,dense:5,relu", Heads::Single(4), 3);
    single.begin_task(&[0, 1]).unwrap();
    single.begin_task(&[2, 3]).unwrap();
    let cm = rebuild_confusion_matrix(&single, &data).unwrap();
    assert_eq!(
        cm.counts(),
        brute_force_confusion(&single, &data).as_slice()
    );

    let mut multi = build("flatten,dense:5,relu", Heads::Multi(vec![2, 2]), 3);
    multi.begin_task(&[0, 1]).unwrap();
    multi.begin_task(&[2, 3]).unwrap();
    let cm = rebuild_confusion_matrix(&multi, &data).unwrap();
    let expected = brute_force_confusion(&multi, &data);
    assert_eq!(cm.counts(), expected.as_slice());
    // Task-IL predictions never leave the task block.
    assert_eq!(
        cm.counts()[0][2] + cm.counts()[0][3] + cm.counts()[3][0] + cm.counts()[3][1],
        0
    );

    let unseen = labeled(12, &[0, 5]);
    assert!(rebuild_confusion_matrix(&single, &unseen).is_err());
}

#[test]
fn alpha_is_a_softmax_of_cosine_similarities() {
    let mut l = build("flatten,dense:3,relu", Heads::Single(3), 0);
    l.begin_task(&[0, 1, 2]).unwrap();
    // Orthogonal rows: cosines (1, 0, 0) for class 0.
    let w = vec![2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.5];
    l.set_param("head.0.weight", Tensor::new(vec![3, 3], w).unwrap())
        .unwrap();
    let alpha = l.class_similarity_alpha(0).unwrap();
    let e = std::f64::consts::E;
    let expected = [e / (e + 2.0), 1.0 / (e + 2.0), 1.0 / (e + 2.0)];
    for (a, b) in alpha.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((alpha[0] - 0.576).abs() < 1e-3 && (alpha[1] - 0.212).abs() < 1e-3);

    // Scaling a row leaves cosines, and therefore alpha, unchanged.
    let w = vec![20.0, 0.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0, 5.0];
    l.set_param("head.0.weight", Tensor::new(vec![3, 3], w).unwrap())
        .unwrap();
    let scaled = l.class_similarity_alpha(0).unwrap();
    for (a, b) in alpha.iter().zip(&scaled) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn checkpoints_round_trip_bitwise() {
    for heads in [Heads::Single(6), Heads::Multi(vec![2, 2, 2])] {
        let mut l = build("conv:2:3,relu,avgpool:2,flatten,dense:5,relu", heads, 77);
        l.begin_task(&[0, 1]).unwrap();
        l.begin_task(&[2, 3]).unwrap();
        l.set_confusion(Some(
            ConfusionMatrix::from_counts(
                vec![0, 1, 2, 3],
                vec![
                    vec![3, 1, 0, 0],
                    vec![0, 4, 0, 0],
                    vec![0, 0, 0, 0],
                    vec![1, 0, 2, 5],
                ],
            )
            .unwrap(),
        ));
        let mut buf = Vec::new();
        write_checkpoint(&l, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.config(), l.config());
        assert_eq!(back.classes_seen(), l.classes_seen());
        assert_eq!(back.task_classes(), l.task_classes());
        assert_eq!(back.confusion(), l.confusion());
        let a: BTreeMap<_, _> = l
            .params()
            .iter()
            .map(|(k, v)| (k.clone(), bits(v)))
            .collect();
        let b: BTreeMap<_, _> = back
            .params()
            .iter()
            .map(|(k, v)| (k.clone(), bits(v)))
            .collect();
        assert_eq!(a, b);
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let mut l = build("flatten,dense:3,relu", Heads::Single(2), 1);
    l.begin_task(&[0, 1]).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&l, &mut buf).unwrap();
    assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
    assert!(read_checkpoint(&b"not a checkpoint"[..]).is_err());
}
