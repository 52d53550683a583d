//! The subcommands, over a validated [`RunConfig`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use mcfa_core::analysis::{
    collect_vectors, dump_diagnostics, neighbors_csv, projection_csv, separation_csv, separation_report,
};
use mcfa_core::data::{
    gen_synthetic, load_embeddings, load_parallel_corpus, make_folds, write_corpus, Dataset, DatasetSplit,
    EmbeddingTable, RawCorpus,
};
use mcfa_core::model::{self, ensemble_evaluate, evaluate, write_log, Evaluation, ModelBundle, TrainConfig};
use mcfa_core::Exec;

use crate::config::{RunConfig, Source};
use crate::error::CliError;

pub const MODEL_FILE: &str = "model.bin";
pub const LOG_FILE: &str = "train_log.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

const EXEC: Exec = Exec::Parallel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitKind {
    Train,
    Dev,
    Test,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Dev => "dev",
            SplitKind::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum AnalysisKind {
    Pca,
    Separation,
    Neighbors,
    Diagnostics,
}

/// The run's examples and its train/dev/test splits (one per fold under CV).
pub struct Prepared {
    pub raw: RawCorpus,
    pub splits: Vec<DatasetSplit>,
}

fn concat(train: RawCorpus, test: RawCorpus) -> RawCorpus {
    let mut raw = train;
    raw.examples.extend(test.examples);
    raw
}

fn held_out(raw: RawCorpus, n_train: usize, train: &TrainConfig) -> Prepared {
    let pool: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..raw.len()).collect();
    let split = DatasetSplit::carve_dev(&pool, test, train.dev_fraction, train.seed, None);
    Prepared {
        raw,
        splits: vec![split],
    }
}

pub fn prepare(run: &RunConfig) -> Result<Prepared, CliError> {
    match &run.source {
        Source::CrossValidation { files, k } => {
            let raw = load_parallel_corpus(files, &run.view_names)?;
            let (splits, warnings) = make_folds(&raw.labels(), *k, run.seed(), run.train.dev_fraction)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            Ok(Prepared { raw, splits })
        }
        Source::FixedTest { files, test_files } => {
            let train = load_parallel_corpus(files, &run.view_names)?;
            let test = load_parallel_corpus(test_files, &run.view_names)?;
            let n_train = train.len();
            Ok(held_out(concat(train, test), n_train, &run.train))
        }
        Source::Synthetic { config, n_test } => {
            let raw = gen_synthetic(config)?;
            let n_train = raw.len() - n_test;
            Ok(held_out(raw, n_train, &run.train))
        }
    }
}

fn require_examples(what: &str, indices: &[usize]) -> Result<(), CliError> {
    if indices.is_empty() {
        Err(CliError::data(format!("empty split: no {what} examples")))
    } else {
        Ok(())
    }
}

fn embedding_tables(run: &RunConfig, ds: &Dataset, seed: u64) -> Result<Option<Vec<EmbeddingTable>>, CliError> {
    if run.embeddings.iter().all(Option::is_none) {
        return Ok(None);
    }
    let d = run.encoder.d_word;
    run.embeddings
        .iter()
        .enumerate()
        .map(|(v, path)| match path {
            Some(p) => Ok(load_embeddings(p, &ds.vocabs[v], d, v, seed)?),
            None => Ok(EmbeddingTable::random(v, ds.vocabs[v].len(), d, seed)),
        })
        .collect::<Result<Vec<_>, CliError>>()
        .map(Some)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

/// `index,label,predicted,p0,...`
pub fn predictions_csv(eval: &Evaluation) -> String {
    let n_classes = eval.predictions.first().map_or(0, |p| p.probs.len());
    let mut out = String::from("index,label,predicted");
    for c in 0..n_classes {
        let _ = write!(out, ",p{c}");
    }
    out.push('\n');
    for p in &eval.predictions {
        let _ = write!(out, "{},{},{}", p.index, p.label, p.predicted);
        for q in &p.probs {
            let _ = write!(out, ",{q}");
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
struct FoldResult {
    fold: usize,
    best_epoch: usize,
    best_dev_acc: f64,
    test_acc: f64,
}

fn fold_dir(run: &RunConfig, split: &DatasetSplit) -> PathBuf {
    match split.fold {
        Some(f) => run.out_dir.join(format!("fold{f}")),
        None => run.out_dir.clone(),
    }
}

fn train_split(run: &RunConfig, raw: &RawCorpus, split: &DatasetSplit) -> Result<FoldResult, CliError> {
    require_examples("training", &split.train)?;
    require_examples("test", &split.test)?;
    let fold = split.fold.unwrap_or(0);
    let config = TrainConfig {
        seed: run.seed() + fold as u64,
        ..run.train.clone()
    };
    let ds = raw.into_dataset(&split.train);
    let embeddings = embedding_tables(run, &ds, config.seed)?;
    let bundle = ModelBundle::init(run.mode, &ds, run.encoder.clone(), config, embeddings)?;
    let outcome = model::train(bundle, &ds, split, EXEC)?;
    let eval = evaluate(&outcome.bundle, &ds, &split.test, EXEC)?;

    let dir = fold_dir(run, split);
    create_dir(&dir)?;
    model::save(&outcome.bundle, &dir.join(MODEL_FILE))?;
    write_log(&dir.join(LOG_FILE), &outcome.log)?;
    write_file(&dir.join(PREDICTIONS_FILE), &predictions_csv(&eval))?;
    Ok(FoldResult {
        fold,
        best_epoch: outcome.best_epoch,
        best_dev_acc: outcome.best_dev_acc,
        test_acc: eval.accuracy,
    })
}

/// Runs every split on up to `jobs` threads. Results come back in split
/// order; the first failing split (in that order) wins.
fn train_all(run: &RunConfig, prepared: &Prepared) -> Result<Vec<FoldResult>, CliError> {
    let n = prepared.splits.len();
    let slots: Mutex<Vec<Option<Result<FoldResult, CliError>>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..run.jobs.min(n) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = train_split(run, &prepared.raw, &prepared.splits[i]);
                slots.lock().expect("no panics while holding the lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every split ran"))
        .collect()
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains and returns the summary line `mode,n_views,mean_acc,std_acc`.
pub fn cmd_train(run: &RunConfig) -> Result<String, CliError> {
    let prepared = prepare(run)?;
    create_dir(&run.out_dir)?;
    let results = train_all(run, &prepared)?;

    let mut table = String::from("fold,best_epoch,best_dev_acc,test_acc\n");
    for r in &results {
        let _ = writeln!(table, "{},{},{},{}", r.fold, r.best_epoch, r.best_dev_acc, r.test_acc);
    }
    write_file(&run.out_dir.join(RESULTS_FILE), &table)?;

    let accs: Vec<f64> = results.iter().map(|r| r.test_acc).collect();
    let (mean, std) = mean_std(&accs);
    let line = format!("{},{},{mean},{std}", run.mode, run.view_names.len());
    write_file(&run.out_dir.join(SUMMARY_FILE), &format!("mode,n_views,mean_acc,std_acc\n{line}\n"))?;
    Ok(line)
}

/// The dataset (vocabularies from the split's training part) and the chosen
/// indices.
pub fn select(
    run: &RunConfig,
    split: SplitKind,
    fold: Option<usize>,
) -> Result<(Dataset, Vec<usize>), CliError> {
    let prepared = prepare(run)?;
    let chosen = match (&run.source, fold) {
        (Source::CrossValidation { k, .. }, Some(f)) => prepared
            .splits
            .get(f)
            .ok_or_else(|| CliError::config(format!("--fold {f} is out of range for {k} folds")))?,
        (Source::CrossValidation { .. }, None) => {
            return Err(CliError::config("a cross-validation config needs --fold".into()));
        }
        (_, Some(_)) => return Err(CliError::config("--fold only applies to cross-validation configs".into())),
        (_, None) => &prepared.splits[0],
    };
    let indices = match split {
        SplitKind::Train => chosen.train.clone(),
        SplitKind::Dev => chosen.dev.clone(),
        SplitKind::Test => chosen.test.clone(),
    };
    require_examples(split.name(), &indices)?;
    Ok((prepared.raw.into_dataset(&chosen.train), indices))
}

pub fn load_model(path: &Path) -> Result<ModelBundle, CliError> {
    Ok(model::load(path)?)
}

/// Evaluates one model, writes its predictions and returns the accuracy.
pub fn cmd_eval(bundle: &ModelBundle, ds: &Dataset, indices: &[usize], predictions: &Path) -> Result<f64, CliError> {
    let eval = evaluate(bundle, ds, indices, EXEC)?;
    write_predictions(predictions, &eval)?;
    Ok(eval.accuracy)
}

pub fn cmd_ensemble(
    bundles: &[ModelBundle],
    ds: &Dataset,
    indices: &[usize],
    predictions: &Path,
) -> Result<f64, CliError> {
    if bundles.len() < 2 {
        return Err(CliError::config(format!("an ensemble needs at least 2 models, got {}", bundles.len())));
    }
    let refs: Vec<&ModelBundle> = bundles.iter().collect();
    let eval = ensemble_evaluate(&refs, ds, indices, EXEC)?;
    write_predictions(predictions, &eval)?;
    Ok(eval.accuracy)
}

fn write_predictions(path: &Path, eval: &Evaluation) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(path, &predictions_csv(eval))
}

pub struct AnalyzeOptions {
    pub kind: AnalysisKind,
    pub components: usize,
    /// Dataset indices; `None` takes the first few of the split.
    pub queries: Option<Vec<usize>>,
    pub neighbors: usize,
    pub out_dir: PathBuf,
}

const DEFAULT_QUERIES: usize = 5;

/// Writes the requested analysis CSVs and returns their paths.
pub fn cmd_analyze(
    bundle: &ModelBundle,
    ds: &Dataset,
    indices: &[usize],
    opts: &AnalyzeOptions,
) -> Result<Vec<PathBuf>, CliError> {
    create_dir(&opts.out_dir)?;
    let mut written = Vec::new();
    if opts.kind == AnalysisKind::Diagnostics {
        let path = opts.out_dir.join("diagnostics.csv");
        dump_diagnostics(bundle, ds, indices, &path, EXEC)?;
        written.push(mcfa_core::analysis::vectors_path(&path));
        written.insert(0, path);
        return Ok(written);
    }
    let vectors = collect_vectors(bundle, ds, indices, EXEC)?;
    match opts.kind {
        AnalysisKind::Pca => {
            for (space, mats) in vectors.spaces() {
                let path = opts.out_dir.join(format!("pca_{space}.csv"));
                write_file(&path, &projection_csv(&vectors, mats, opts.components)?)?;
                written.push(path);
            }
        }
        AnalysisKind::Separation => {
            let path = opts.out_dir.join("separation.csv");
            write_file(&path, &separation_csv(&separation_report(&vectors)?))?;
            written.push(path);
        }
        AnalysisKind::Neighbors => {
            let rows = match &opts.queries {
                None => (0..vectors.indices.len().min(DEFAULT_QUERIES)).collect(),
                Some(q) => q
                    .iter()
                    .map(|i| {
                        vectors
                            .indices
                            .iter()
                            .position(|j| j == i)
                            .ok_or_else(|| CliError::data(format!("query example {i} is not in the selected split")))
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            };
            let (csv, warnings) = neighbors_csv(&vectors, &rows, opts.neighbors)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let path = opts.out_dir.join("neighbors.csv");
            write_file(&path, &csv)?;
            written.push(path);
        }
        AnalysisKind::Diagnostics => unreachable!("handled above"),
    }
    Ok(written)
}

/// Writes the synthetic corpus as `train/` and `test/` corpus directories.
pub fn cmd_gen_synthetic(run: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let Source::Synthetic { config, n_test } = &run.source else {
        return Err(CliError::config("gen-synthetic needs a [synthetic] block".into()));
    };
    let raw = gen_synthetic(config)?;
    let n_train = raw.len() - n_test;
    let part = |range: std::ops::Range<usize>| RawCorpus {
        view_names: raw.view_names.clone(),
        examples: raw.examples[range].to_vec(),
    };
    let mut paths = write_corpus(&part(0..n_train), &out.join("train"))?;
    paths.extend(write_corpus(&part(n_train..raw.len()), &out.join("test"))?);
    Ok(paths)
}
