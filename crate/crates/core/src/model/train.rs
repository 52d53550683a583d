use std::fmt::Write as _;
use std::path::Path;

use super::eval::evaluate;
use super::forward::batch_loss_and_grads;
use super::ModelBundle;
use crate::data::{batch_iter, Dataset, DatasetSplit};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numerics::{max_norm_rescale, Adadelta};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainLogRow {
    pub epoch: usize,
    /// Mean training loss over the epoch, with dropout on.
    pub train_loss: f64,
    pub dev_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev accuracy.
    pub bundle: ModelBundle,
    pub log: Vec<TrainLogRow>,
    pub best_epoch: usize,
    pub best_dev_acc: f64,
    pub stopped_early: bool,
}

/// State after one optimizer step, as seen by a step observer.
pub struct StepInfo<'a> {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub bundle: &'a ModelBundle,
}

pub fn train(bundle: ModelBundle, dataset: &Dataset, split: &DatasetSplit, exec: Exec) -> Result<TrainOutcome> {
    train_observed(bundle, dataset, split, exec, &mut |_| {})
}

/// Adadelta on shuffled mini-batches with max-norm on the classifier rows,
/// early-stopped on dev accuracy. `observer` runs after every step.
pub fn train_observed(
    mut bundle: ModelBundle,
    dataset: &Dataset,
    split: &DatasetSplit,
    exec: Exec,
    observer: &mut dyn FnMut(&StepInfo<'_>),
) -> Result<TrainOutcome> {
    if dataset.view_names != bundle.view_names || dataset.vocabs != bundle.vocabs {
        return Err(Error::Invalid("training data must be indexed with the model's views and vocabularies".into()));
    }
    if split.train.is_empty() || split.dev.is_empty() {
        return Err(Error::Invalid(format!(
            "need non-empty train and dev splits, got {} and {}",
            split.train.len(),
            split.dev.len()
        )));
    }
    let cfg = bundle.config.clone();
    let mut opt = Adadelta::new(&bundle.store, cfg.adadelta)?;
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, ModelBundle)> = None;
    let mut stale = 0;
    let mut stopped_early = false;
    let mut step = 0;

    for epoch in 1..=cfg.max_epochs {
        let mut loss_sum = 0.0;
        let mut seen = 0;
        for batch in batch_iter(dataset, &split.train, cfg.batch_size, cfg.seed, epoch, bundle.min_len()) {
            step += 1;
            let abort = |e: Error| match e {
                Error::NonFinite(what) => {
                    Error::TrainingAborted(format!("non-finite {what} at epoch {epoch}, step {step}"))
                }
                other => other,
            };
            let (loss, grads) = batch_loss_and_grads(&bundle, &batch, Some(epoch), exec).map_err(abort)?;
            if !loss.is_finite() {
                return Err(abort(Error::NonFinite("loss")));
            }
            if !grads.is_finite() {
                return Err(abort(Error::NonFinite("gradient")));
            }
            opt.step(&mut bundle.store, &grads).map_err(abort)?;
            max_norm_rescale(bundle.store.get_mut(bundle.classifier.weight), cfg.max_norm);
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
            observer(&StepInfo {
                epoch,
                step,
                loss,
                bundle: &bundle,
            });
        }
        let dev_acc = evaluate(&bundle, dataset, &split.dev, exec)?.accuracy;
        log.push(TrainLogRow {
            epoch,
            train_loss: loss_sum / seen as f64,
            dev_acc,
        });
        if best.as_ref().is_none_or(|(_, acc, _)| dev_acc > *acc) {
            best = Some((epoch, dev_acc, bundle.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    let (best_epoch, best_dev_acc, bundle) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        bundle,
        log,
        best_epoch,
        best_dev_acc,
        stopped_early,
    })
}

/// Writes `epoch,train_loss,dev_acc` rows.
pub fn write_log(path: &Path, log: &[TrainLogRow]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,dev_acc\n");
    for r in log {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.dev_acc);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
