mod common;

use std::time::Instant;

use aggclass::aggregate::{AggregateLabel, Task, TaskKind};
use aggclass::model::{Architecture, Checkpoint, Head, Model};
use aggclass::posterior::{brute_force_posterior, posterior, ClassProbabilities};
use aggclass::rng::seeded;
use rand::Rng;

#[test]
fn mlp_forward_matches_plain_matmul() {
    let (d, h, k) = (3, 5, 4);
    let arch = Architecture::Mlp { d, hidden: h, outputs: k };
    let params: Vec<f64> = (0..arch.num_params()).map(|i| ((i * 37 % 23) as f64 - 11.0) / 7.0).collect();
    let model = Model::from_params(arch, Head::Softmax, params.clone()).unwrap();
    let x = [0.5, -1.25, 2.0];

    let (w1, rest) = params.split_at(h * d);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(k * h);
    let hidden: Vec<f64> = common::affine(w1, b1, &x).into_iter().map(|v| v.max(0.0)).collect();
    let expected = common::affine(w2, b2, &hidden);

    let out = model.forward(&x).unwrap();
    assert!(common::max_abs_diff(&out, &expected) < 1e-12, "{out:?} vs {expected:?}");
    let eta = model.eta(&x).unwrap();
    assert!(common::max_abs_diff(&eta, &common::softmax(&expected)) < 1e-12);
}

#[test]
fn checkpoint_file_round_trip_is_bit_exact() {
    let model = Model::mlp(4, 9, 3, Head::Cumulative, 17);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.to_checkpoint().save(&path).unwrap();
    let back = Model::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back.architecture(), model.architecture());
    assert_eq!(back.head(), model.head());
    assert!(back.params().iter().zip(model.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn llp_dp_matches_and_beats_enumeration_at_m6_k10() {
    let task = Task::new(TaskKind::Llp, 6, 10).unwrap();
    let mut rng = seeded(3, 77);
    let etas: Vec<ClassProbabilities> = (0..6)
        .map(|_| ClassProbabilities::from_logits(&(0..10).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>()))
        .collect();
    let z = AggregateLabel::Counts(vec![2, 1, 0, 1, 0, 0, 1, 0, 1, 0]);

    let t = Instant::now();
    let dp = posterior(&task, &etas, &z).unwrap();
    let dp_time = t.elapsed();
    let t = Instant::now();
    let brute = brute_force_posterior(&task, &etas, &z).unwrap();
    let brute_time = t.elapsed();

    assert!((dp.pz - brute.pz).abs() < 1e-12);
    for (a, b) in dp.joint.iter().zip(&brute.joint) {
        assert!(common::max_abs_diff(a, b) < 1e-12);
    }
    assert!(dp_time < brute_time, "dp {dp_time:?} vs enumeration {brute_time:?}");
}
