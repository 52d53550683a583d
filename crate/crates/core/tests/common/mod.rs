#![allow(dead_code)]

use mcfa_core::data::{gen_synthetic, Batch, Dataset, DatasetSplit, RawCorpus, SyntheticConfig, PAD};
use mcfa_core::encoder::EncoderConfig;
use mcfa_core::mcfa::McfaParams;
use mcfa_core::model::{batch_loss, batch_loss_and_grads, Mode, ModelBundle, TrainConfig};
use mcfa_core::numerics::{check_gradients, GradCheckReport, ParamStore, Tensor};
use mcfa_core::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-scale..scale)).collect()).unwrap()
}

pub fn random_vectors(r: &mut impl Rng, n: usize, d: usize, scale: f64) -> Vec<Tensor> {
    (0..n).map(|_| uniform(r, &[d], scale)).collect()
}

/// Overwrites every parameter with U(-scale, scale), keeping PAD rows zero.
pub fn randomize(bundle: &mut ModelBundle, r: &mut impl Rng, scale: f64) {
    let ids: Vec<_> = bundle.store.ids().collect();
    for id in ids {
        let shape = bundle.store.get(id).shape().to_vec();
        *bundle.store.get_mut(id) = uniform(r, &shape, scale);
    }
    for e in &bundle.encoders {
        bundle.store.get_mut(e.embedding).row_mut(PAD).fill(0.0);
    }
}

// ---------------------------------------------------------------------------
// Straight-line attachment with plain loops and
// no shared code with the library.

fn row_times(v: &[f64], m: &Tensor) -> Vec<f64> {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    assert_eq!(rows, v.len());
    let mut out = vec![0.0; cols];
    for j in 0..cols {
        let mut s = 0.0;
        for i in 0..rows {
            s += v[i] * m.data()[i * cols + j];
        }
        out[j] = s;
    }
    out
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub struct Reference {
    pub rho: Vec<f64>,
    pub attention: Vec<Vec<f64>>,
    pub contexts: Vec<Vec<f64>>,
    pub gates: Vec<Vec<f64>>,
    pub altered: Vec<Vec<f64>>,
}

pub fn reference_mcfa(store: &ParamStore, p: &McfaParams, vectors: &[Vec<f64>]) -> Reference {
    let n = vectors.len();
    let d = vectors[0].len();
    let rho: Vec<f64> = (0..n)
        .map(|k| logistic(row_times(&vectors[k], store.get(p.views[k].self_scorer))[0]))
        .collect();
    let xv: Vec<Vec<f64>> = (0..n).map(|k| row_times(&vectors[k], store.get(p.views[k].attention_proj))).collect();
    let x = store.get(p.scorer).data();
    let mut attention = Vec::new();
    for i in 0..n {
        let e: Vec<f64> = (0..n)
            .map(|j| {
                let mut s = 0.0;
                for t in 0..d {
                    s += x[t] * (xv[i][t] + xv[j][t] * rho[j]).tanh();
                }
                s
            })
            .collect();
        let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = e.iter().map(|v| (v - m).exp()).sum();
        attention.push(e.iter().map(|v| (v - m).exp() / z).collect::<Vec<_>>());
    }
    let uv: Vec<Vec<f64>> = (0..n).map(|k| row_times(&vectors[k], store.get(p.views[k].context_proj))).collect();
    let contexts: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..d).map(|t| (0..n).map(|k| attention[i][k] * uv[k][t]).sum()).collect())
        .collect();
    let mut gates = Vec::new();
    let mut altered = Vec::new();
    for k in 0..n {
        let joined: Vec<f64> = vectors[k].iter().chain(&contexts[k]).copied().collect();
        let w: Vec<f64> = row_times(&joined, store.get(p.views[k].gate)).into_iter().map(logistic).collect();
        altered.push(vectors[k].iter().zip(&w).map(|(a, b)| a * b).collect());
        gates.push(w);
    }
    Reference {
        rho,
        attention,
        contexts,
        gates,
        altered,
    }
}

// ---------------------------------------------------------------------------
// Tiny end-to-end model for gradient checks.

pub fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        d_word: 4,
        n_maps: 2,
        windows: vec![3, 4, 5],
    }
}

/// Three views, two classes, sentences of at most 8 tokens.
pub fn tiny_dataset(seed: u64) -> Dataset {
    let mut cfg = SyntheticConfig::new(2, 12, vec![vec![0], vec![1], vec![0, 1]], vec![0.0, 0.0, 0.2], seed);
    cfg.min_len = 3;
    cfg.max_len = 8;
    cfg.filler_tokens = 5;
    cfg.signal_tokens = 2;
    let raw = gen_synthetic(&cfg).unwrap();
    raw.into_dataset(&(0..raw.len()).collect::<Vec<_>>())
}

pub fn full_batch(ds: &Dataset, bundle: &ModelBundle) -> Batch {
    let idx: Vec<usize> = (0..ds.len()).collect();
    mcfa_core::data::batch_iter(ds, &idx, ds.len(), 0, 0, bundle.min_len()).next().unwrap()
}

/// Finite-difference check of the batch loss over every parameter, with
/// dropout masks held fixed. The PAD rows are skipped (they are frozen).
pub fn end_to_end_gradcheck(mode: Mode, seed: u64, dropout: bool) -> GradCheckReport {
    let ds = tiny_dataset(seed);
    let cfg = TrainConfig {
        seed,
        l2_lambda: 0.05,
        ..Default::default()
    };
    let mut bundle = ModelBundle::init(mode, &ds, tiny_encoder(), cfg, None).unwrap();
    randomize(&mut bundle, &mut rng(seed ^ 0x5eed), 0.5);
    let batch = full_batch(&ds, &bundle);
    let epoch = dropout.then_some(1);
    let (_, grads) = batch_loss_and_grads(&bundle, &batch, epoch, Exec::Sequential).unwrap();
    let ids: Vec<_> = bundle.store.ids().collect();
    let embeddings: Vec<_> = bundle.encoders.iter().map(|e| e.embedding).collect();
    let d_word = bundle.encoder.d_word;
    check_gradients(
        &bundle.store,
        &ids,
        &grads,
        1e-5,
        |id, i| embeddings.contains(&id) && i / d_word == PAD,
        |s| {
            let mut b = bundle.clone();
            b.store = s.clone();
            batch_loss(&b, &batch, epoch, Exec::Sequential)
        },
    )
    .unwrap()
}

// ---------------------------------------------------------------------------
// The synthetic relative-performance task.

pub const TASK_TRAIN: usize = 2000;
pub const TASK_TEST: usize = 500;
/// Index of the noisy view.
pub const NOISY_VIEW: usize = 2;

/// Four classes spread over three views ({0, 1}, {2}, {3}); the third view
/// is corrupted at rate 0.5.
pub fn task_config(seed: u64) -> SyntheticConfig {
    SyntheticConfig::new(
        4,
        TASK_TRAIN + TASK_TEST,
        vec![vec![0, 1], vec![2], vec![3]],
        vec![0.0, 0.0, 0.5],
        1000 + seed,
    )
}

pub fn task_encoder() -> EncoderConfig {
    EncoderConfig {
        d_word: 32,
        n_maps: 16,
        windows: vec![3, 4, 5],
    }
}

pub struct Task {
    pub raw: RawCorpus,
    pub dataset: Dataset,
    pub split: DatasetSplit,
    pub config: TrainConfig,
}

pub fn task(seed: u64) -> Task {
    let raw = gen_synthetic(&task_config(seed)).unwrap();
    let train: Vec<usize> = (0..TASK_TRAIN).collect();
    let dataset = raw.into_dataset(&train);
    let config = TrainConfig {
        seed,
        ..Default::default()
    };
    let split = DatasetSplit::carve_dev(
        &train,
        (TASK_TRAIN..TASK_TRAIN + TASK_TEST).collect(),
        config.dev_fraction,
        seed,
        None,
    );
    Task {
        raw,
        dataset,
        split,
        config,
    }
}

// ---------------------------------------------------------------------------
// Random attachment instances.

pub struct Instance {
    pub store: ParamStore,
    pub params: McfaParams,
    pub vectors: Vec<Tensor>,
}

/// Every attachment tensor and input drawn from U(-scale, scale).
pub fn random_instance(seed: u64, n_views: usize, d: usize, scale: f64) -> Instance {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let params = McfaParams::register(&mut store, d, n_views, &mut r);
    for id in params.ids() {
        let shape = store.get(id).shape().to_vec();
        *store.get_mut(id) = uniform(&mut r, &shape, scale);
    }
    let vectors = random_vectors(&mut r, n_views, d, scale);
    Instance { store, params, vectors }
}

/// Largest absolute difference between the library's attachment and the
/// straight-line transcription.
pub fn oracle_max_diff(inst: &Instance) -> f64 {
    use mcfa_core::mcfa::{mcfa_forward_values, GateMode};
    let got = mcfa_forward_values(&inst.store, &inst.params, &inst.vectors, GateMode::Learned).unwrap();
    let plain: Vec<Vec<f64>> = inst.vectors.iter().map(|v| v.data().to_vec()).collect();
    let want = reference_mcfa(&inst.store, &inst.params, &plain);
    let mut worst = 0.0f64;
    let mut cmp = |a: &[f64], b: &[f64]| {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs());
        }
    };
    cmp(&got.self_usability, &want.rho);
    for i in 0..plain.len() {
        cmp(got.attention.row(i), &want.attention[i]);
        cmp(got.contexts[i].data(), &want.contexts[i]);
        cmp(got.gates[i].data(), &want.gates[i]);
        cmp(got.altered[i].data(), &want.altered[i]);
    }
    worst
}

/// Attention rows sum to one with entries in (0, 1); gates in (0, 1); fixed
/// vectors never exceed the originals in magnitude. Returns the first
/// violation.
pub fn attachment_invariants(inst: &Instance) -> std::result::Result<(), String> {
    use mcfa_core::mcfa::{mcfa_forward_values, GateMode};
    let rep = mcfa_forward_values(&inst.store, &inst.params, &inst.vectors, GateMode::Learned).unwrap();
    let n = inst.vectors.len();
    for i in 0..n {
        let row = rep.attention.row(i);
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(format!("attention row {i} sums to {s}"));
        }
        if let Some(a) = row.iter().find(|&&a| !(a > 0.0 && a < 1.0) && n > 1) {
            return Err(format!("attention entry {a} outside (0, 1)"));
        }
        if let Some(g) = rep.gates[i].data().iter().find(|&&g| !(g > 0.0 && g < 1.0)) {
            return Err(format!("gate {g} outside (0, 1)"));
        }
        for (j, (a, v)) in rep.altered[i].data().iter().zip(inst.vectors[i].data()).enumerate() {
            if a.abs() > v.abs() {
                return Err(format!("view {i} dim {j}: |{a}| > |{v}|"));
            }
        }
    }
    Ok(())
}

/// Classifier features of an MCFA bundle run with all gates forced to one,
/// next to a B1 bundle's features on the same encoders.
pub fn ones_gate_features(mcfa: &ModelBundle, b1: &ModelBundle, tokens: &[Vec<usize>]) -> (Tensor, Tensor) {
    use mcfa_core::mcfa::GateMode;
    use mcfa_core::model::forward_tape;
    use mcfa_core::numerics::Tape;
    let mut tape = Tape::new(&mcfa.store);
    let fm = forward_tape(&mut tape, mcfa, tokens, None, GateMode::Ones).unwrap();
    let a = tape.value(fm.features).clone();
    let mut tape = Tape::new(&b1.store);
    let fb = forward_tape(&mut tape, b1, tokens, None, GateMode::Learned).unwrap();
    (a, tape.value(fb.features).clone())
}
