//! Worked examples checked against independently computed answers.

mod common;

use common::{rng, tiny_dataset, tiny_encoder, uniform};
use mcfa_core::analysis::{cosine, nearest_neighbors, pca_project};
use mcfa_core::data::{gen_synthetic, DatasetSplit, SyntheticConfig, PAD};
use mcfa_core::encoder::{encode_values, EncoderConfig, EncoderParams};
use mcfa_core::model::{
    average_probabilities, ensemble_predict, evaluate, predict_proba, train, Mode, ModelBundle, TrainConfig,
};
use mcfa_core::numerics::{argmax, ParamStore, Tensor};
use mcfa_core::Exec;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

// ---------------------------------------------------------------------------
// encoder

/// Max over every window of ReLU(W x + b), enumerated directly.
fn brute_force_encode(store: &ParamStore, p: &EncoderParams, d_word: usize, tokens: &[usize]) -> Vec<f64> {
    let emb = store.get(p.embedding);
    let mut out = Vec::new();
    for bank in &p.banks {
        let w = store.get(bank.weight);
        let b = store.get(bank.bias).data();
        for m in 0..w.rows() {
            let mut best = f64::NEG_INFINITY;
            for start in 0..=tokens.len() - bank.window {
                let mut s = b[m];
                for k in 0..bank.window {
                    for j in 0..d_word {
                        s += w.at(m, k * d_word + j) * emb.at(tokens[start + k], j);
                    }
                }
                best = best.max(s.max(0.0));
            }
            out.push(best);
        }
    }
    out
}

#[test]
fn encoder_matches_window_enumeration_on_sentence_and_its_double() {
    let cfg = EncoderConfig {
        d_word: 3,
        n_maps: 4,
        windows: vec![3, 4, 5],
    };
    for seed in 0..20 {
        let mut r = rng(seed);
        let mut emb = uniform(&mut r, &[10, 3], 1.0);
        emb.row_mut(PAD).fill(0.0);
        let mut store = ParamStore::new();
        let p = EncoderParams::register(&mut store, "e", &cfg, emb, &mut r).unwrap();
        for bank in &p.banks {
            *store.get_mut(bank.bias) = uniform(&mut r, &[4], 0.3);
        }
        let len = r.gen_range(5..9);
        let s: Vec<usize> = (0..len).map(|_| r.gen_range(1..10)).collect();
        let ss: Vec<usize> = s.iter().chain(&s).copied().collect();
        let single = encode_values(&store, &p, &s).unwrap();
        let double = encode_values(&store, &p, &ss).unwrap();
        for (a, b) in single.data().iter().zip(brute_force_encode(&store, &p, 3, &s)) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in double.data().iter().zip(brute_force_encode(&store, &p, 3, &ss)) {
            assert!((a - b).abs() < 1e-12);
        }
        // s.s repeats every window of s and adds the boundary-spanning ones
        for (a, b) in single.data().iter().zip(double.data()) {
            assert!(b >= a);
        }
    }
}

// ---------------------------------------------------------------------------
// synthetic data probes

#[test]
fn bag_of_tokens_probe_separates_a_clean_single_view() {
    let cfg = SyntheticConfig::new(4, 200, vec![vec![0, 1, 2, 3]], vec![0.0], 9);
    let raw = gen_synthetic(&cfg).unwrap();
    let mut correct = 0;
    for ex in &raw.examples {
        // one feature per class: how many of that class's signal tokens occur
        let counts: Vec<f64> = (0..4)
            .map(|c| ex.views[0].iter().filter(|t| t.starts_with(&format!("v0c{c}s"))).count() as f64)
            .collect();
        correct += usize::from(argmax(&counts) == ex.label);
    }
    assert_eq!(correct, raw.len());
}

fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        d_word: 8,
        n_maps: 4,
        windows: vec![3, 4, 5],
    }
}

fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        max_epochs: 15,
        patience: 15,
        batch_size: 20,
        ..Default::default()
    }
}

#[test]
fn view_informative_for_one_class_cannot_split_the_others() {
    // view 0 knows class 0 only; view 1 knows classes 1 and 2
    let cfg = SyntheticConfig::new(3, 450, vec![vec![0], vec![1, 2]], vec![0.0, 0.0], 21);
    let raw = gen_synthetic(&cfg).unwrap();
    let train_idx: Vec<usize> = (0..300).collect();
    let ds = raw.into_dataset(&train_idx);
    let test: Vec<usize> = (300..450).collect();
    let split = DatasetSplit::carve_dev(&train_idx, test.clone(), 0.1, 3, None);

    let only_a = ds.select_views(&[0]);
    let a = ModelBundle::init(Mode::B1, &only_a, small_encoder(), quick_config(3), None).unwrap();
    let a = train(a, &only_a, &split, Exec::Parallel).unwrap().bundle;
    let rest: Vec<usize> = test.iter().copied().filter(|&i| ds.examples[i].label != 0).collect();
    let acc_rest = evaluate(&a, &only_a, &rest, Exec::Parallel).unwrap().accuracy;
    assert!((0.3..=0.7).contains(&acc_rest), "view 0 alone on classes 1/2: {acc_rest}");

    let both = ModelBundle::init(Mode::B1, &ds, small_encoder(), quick_config(3), None).unwrap();
    let both = train(both, &ds, &split, Exec::Parallel).unwrap().bundle;
    let acc = evaluate(&both, &ds, &test, Exec::Parallel).unwrap().accuracy;
    assert!(acc >= 0.99, "both views: {acc}");
}

// ---------------------------------------------------------------------------
// training

#[test]
fn separable_data_reaches_perfect_dev_accuracy() {
    let cfg = SyntheticConfig::new(3, 240, vec![vec![0, 1, 2], vec![0, 1, 2]], vec![0.0, 0.0], 4);
    let raw = gen_synthetic(&cfg).unwrap();
    let all: Vec<usize> = (0..raw.len()).collect();
    let ds = raw.into_dataset(&all);
    let split = DatasetSplit::carve_dev(&all, vec![], 0.1, 4, None);
    for mode in [Mode::B1, Mode::Mcfa] {
        let b = ModelBundle::init(mode, &ds, small_encoder(), quick_config(4), None).unwrap();
        let out = train(b, &ds, &split, Exec::Parallel).unwrap();
        assert_eq!(out.best_dev_acc, 1.0, "{mode}");
    }
}

#[test]
fn flat_dev_accuracy_with_patience_one_stops_at_epoch_two() {
    let mut ds = tiny_dataset(8);
    // two dev examples with identical tokens and different labels: accuracy
    // is 0.5 whatever the weights
    let i = ds.examples.iter().position(|e| e.label == 0).unwrap();
    let j = ds.examples.iter().position(|e| e.label == 1).unwrap();
    ds.examples[j].tokens = ds.examples[i].tokens.clone();
    let train_idx: Vec<usize> = (0..ds.len()).filter(|&k| k != i && k != j).collect();
    let mut split = DatasetSplit::carve_dev(&train_idx, vec![], 0.1, 0, None);
    split.train = train_idx;
    split.dev = vec![i, j];
    let cfg = TrainConfig {
        patience: 1,
        ..quick_config(0)
    };
    let b = ModelBundle::init(Mode::B1, &ds, tiny_encoder(), cfg, None).unwrap();
    let out = train(b, &ds, &split, Exec::Sequential).unwrap();
    assert_eq!(out.log.len(), 2);
    assert!(out.stopped_early);
    assert_eq!(out.best_epoch, 1);
    assert!(out.log.iter().all(|r| r.dev_acc == 0.5));
}

#[test]
fn same_seed_gives_identical_logs_and_weights() {
    let ds = tiny_dataset(2);
    let all: Vec<usize> = (0..ds.len()).collect();
    let split = DatasetSplit::carve_dev(&all, vec![], 0.25, 2, None);
    let run = || {
        let cfg = TrainConfig {
            max_epochs: 4,
            batch_size: 3,
            ..quick_config(11)
        };
        let b = ModelBundle::init(Mode::Mcfa, &ds, tiny_encoder(), cfg, None).unwrap();
        train(b, &ds, &split, Exec::Parallel).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.log, b.log);
    assert_eq!(a.bundle, b.bundle);
    let bits = |o: &mcfa_core::model::TrainOutcome| o.log.iter().map(|r| r.train_loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

// ---------------------------------------------------------------------------
// evaluation and ensembles

#[test]
fn accuracy_agrees_with_hand_argmax_of_dumped_probabilities() {
    let ds = tiny_dataset(6);
    let cfg = TrainConfig::default();
    let mut b = ModelBundle::init(Mode::Mcfa, &ds, tiny_encoder(), cfg, None).unwrap();
    common::randomize(&mut b, &mut rng(6), 0.8);
    let idx: Vec<usize> = (0..10).collect();
    let ev = evaluate(&b, &ds, &idx, Exec::Parallel).unwrap();
    let mut correct = 0;
    for (k, &i) in idx.iter().enumerate() {
        let p = predict_proba(&b, &ds.examples[i].tokens).unwrap();
        assert_eq!(p.data(), &ev.predictions[k].probs[..]);
        // first maximum wins
        let mut best = 0;
        for c in 1..p.len() {
            if p.data()[c] > p.data()[best] {
                best = c;
            }
        }
        correct += usize::from(best == ds.examples[i].label);
    }
    assert_eq!(ev.accuracy, correct as f64 / 10.0);
}

#[test]
fn constant_prediction_on_balanced_binary_data_scores_half() {
    let ds = tiny_dataset(1);
    let labels = ds.labels();
    assert_eq!(labels.iter().filter(|&&l| l == 0).count() * 2, labels.len());
    let mut b = ModelBundle::init(Mode::B1, &ds, tiny_encoder(), TrainConfig::default(), None).unwrap();
    b.zero_classifier();
    // a positive bias on class 1 makes every prediction class 1
    b.store.get_mut(b.classifier.bias).data_mut()[1] = 1.0;
    let all: Vec<usize> = (0..ds.len()).collect();
    let ev = evaluate(&b, &ds, &all, Exec::Sequential).unwrap();
    assert!(ev.predictions.iter().all(|p| p.predicted == 1));
    assert_eq!(ev.accuracy, 0.5);
}

#[test]
fn identical_members_average_to_themselves() {
    let ds = tiny_dataset(3);
    let mut b = ModelBundle::init(Mode::B2, &ds, tiny_encoder(), TrainConfig::default(), None).unwrap();
    common::randomize(&mut b, &mut rng(3), 0.8);
    for i in 0..ds.len() {
        let single = predict_proba(&b, &ds.examples[i].tokens).unwrap();
        let ens = ensemble_predict(&[&b, &b, &b], &ds, i).unwrap();
        for (x, y) in single.data().iter().zip(ens.data()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((ens.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn opposite_certainties_average_to_a_coin_flip() {
    let avg = average_probabilities(&[Tensor::vector(vec![1.0, 0.0]), Tensor::vector(vec![0.0, 1.0])]).unwrap();
    assert_eq!(avg.data(), &[0.5, 0.5]);
    assert!(average_probabilities(&[Tensor::vector(vec![1.0, 0.0]), Tensor::vector(vec![0.2, 0.3, 0.5])]).is_err());
    assert!(average_probabilities(&[]).is_err());
}

#[test]
fn two_class_grid_oracle_for_averaged_argmax() {
    // every pair of two-class members on a 1/200 grid: the mean's argmax may
    // leave both members behind only if neither clears the 0.5 margin
    let steps = 200;
    let mut disagreements = 0;
    for i in 0..=steps {
        for j in 0..=steps {
            let (a, b) = (i as f64 / steps as f64, j as f64 / steps as f64);
            let pa = Tensor::vector(vec![a, 1.0 - a]);
            let pb = Tensor::vector(vec![b, 1.0 - b]);
            let mean = average_probabilities(&[pa.clone(), pb.clone()]).unwrap();
            let m = argmax(mean.data());
            let differs_from_both = m != argmax(pa.data()) && m != argmax(pb.data());
            if differs_from_both {
                disagreements += 1;
                let margin = |p: &Tensor| (p.data()[0] - p.data()[1]).abs();
                assert!(margin(&pa) <= 0.5 && margin(&pb) <= 0.5, "({a}, {b})");
            }
        }
    }
    // with two classes the mean always sides with at least one member
    assert_eq!(disagreements, 0);
}

// ---------------------------------------------------------------------------
// analysis

#[test]
fn pca_matches_dense_eigensolver() {
    for seed in 0..10 {
        let mut r = rng(40 + seed);
        let x = uniform(&mut r, &[10, 3], 2.0);
        let res = pca_project(&x, 3).unwrap();

        let m = DMatrix::from_row_slice(10, 3, x.data());
        let mean = m.row_mean();
        let mut c = m.clone();
        for mut row in c.row_iter_mut() {
            row -= &mean;
        }
        let cov = c.transpose() * &c / 9.0;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for (k, &e) in order.iter().enumerate() {
            assert!((res.explained_variance[k] - eig.eigenvalues[e]).abs() < 1e-6);
            let v = eig.eigenvectors.column(e);
            let dot: f64 = (0..3).map(|j| v[j] * res.components.at(k, j)).sum();
            let sign = dot.signum();
            for j in 0..3 {
                assert!((sign * v[j] - res.components.at(k, j)).abs() < 1e-6, "seed {seed} pc {k}");
            }
            let proj = &c * v * sign;
            for i in 0..10 {
                assert!((proj[i] - res.projected.at(i, k)).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn nearest_neighbors_match_exhaustive_cosine_table() {
    for seed in 0..10 {
        let x = uniform(&mut rng(70 + seed), &[5, 2], 1.0);
        let table: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                (0..5)
                    .map(|j| {
                        let (a, b) = (x.row(i), x.row(j));
                        let dot = a[0] * b[0] + a[1] * b[1];
                        dot / ((a[0] * a[0] + a[1] * a[1]).sqrt() * (b[0] * b[0] + b[1] * b[1]).sqrt())
                    })
                    .collect()
            })
            .collect();
        for q in 0..5 {
            let nn = nearest_neighbors(q, &x, 4).unwrap();
            let mut want: Vec<usize> = (0..5).filter(|&j| j != q).collect();
            want.sort_by(|&a, &b| table[q][b].total_cmp(&table[q][a]).then(a.cmp(&b)));
            let got: Vec<usize> = nn.ranked.iter().map(|n| n.index).collect();
            assert_eq!(got, want);
            for n in &nn.ranked {
                assert!((n.similarity - table[q][n.index]).abs() < 1e-12);
                assert_eq!(n.similarity, cosine(x.row(q), x.row(n.index)));
            }
        }
    }
}
