use rand::{Rng, RngCore};

use super::{Mode, ModelBundle};
use crate::data::{pad_to, Batch};
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mcfa::{mcfa_forward, FixVars, GateMode};
use crate::numerics::{Gradients, Tape, Tensor, Var};
use crate::rng;

/// Examples per gradient partial sum. Partial sums are formed sequentially
/// and then added in chunk order, so the result does not depend on how many
/// threads ran.
pub const GRAD_CHUNK: usize = 8;

#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// Encoder outputs after dropout, one per view.
    pub views: Vec<Var>,
    pub fix: Option<FixVars>,
    /// Input to the classifier.
    pub features: Var,
    pub probs: Var,
}

fn dropout_mask(len: usize, rate: f64, rng: &mut dyn RngCore) -> Tensor {
    let keep = 1.0 - rate;
    Tensor::vector((0..len).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect())
}

/// Pads every view to the encoder's minimum length.
pub fn inference_tokens(bundle: &ModelBundle, tokens: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let min = bundle.min_len();
    tokens.iter().map(|t| pad_to(t, min)).collect()
}

/// Records one example's forward pass on `tape`, reading parameters from the
/// tape's store. With `dropout` set, inverted dropout masks are drawn from it
/// for every encoder output and, in MCFA mode, for the fixed concatenation.
pub fn forward_tape(
    tape: &mut Tape<'_>,
    bundle: &ModelBundle,
    tokens: &[Vec<usize>],
    mut dropout: Option<&mut dyn RngCore>,
    gate_mode: GateMode,
) -> Result<ForwardVars> {
    if tokens.len() != bundle.n_views() {
        return Err(Error::Invalid(format!(
            "model has {} views, example has {}",
            bundle.n_views(),
            tokens.len()
        )));
    }
    let rate = bundle.config.dropout_rate;
    let d = bundle.encoder.output_width();
    let mut views = Vec::with_capacity(tokens.len());
    for (params, toks) in bundle.encoders.iter().zip(tokens) {
        let mask = match dropout.as_deref_mut() {
            Some(r) if rate > 0.0 => Some(dropout_mask(d, rate, r)),
            _ => None,
        };
        views.push(encode(tape, params, toks, mask)?);
    }
    let (fix, mut features) = match (&bundle.mcfa, bundle.mode) {
        (Some(mp), Mode::Mcfa) => {
            let fv = mcfa_forward(tape, &views, mp, gate_mode)?;
            let cat = tape.concat(&fv.altered)?;
            (Some(fv), cat)
        }
        (None, Mode::Mcfa) => return Err(Error::Invalid("MCFA bundle without attachment parameters".into())),
        _ => (None, tape.concat(&views)?),
    };
    if bundle.mode == Mode::Mcfa {
        if let Some(r) = dropout {
            if rate > 0.0 {
                let mask = dropout_mask(bundle.feature_width(), rate, r);
                features = tape.dropout(features, mask)?;
            }
        }
    }
    let w = tape.param(bundle.classifier.weight);
    let b = tape.param(bundle.classifier.bias);
    let logits = tape.matmul(w, features)?;
    let logits = tape.add(logits, b)?;
    let probs = tape.softmax(logits)?;
    Ok(ForwardVars {
        views,
        fix,
        features,
        probs,
    })
}

/// Class probabilities for one example's (already padded) token ids.
pub fn forward(bundle: &ModelBundle, tokens: &[Vec<usize>], dropout: Option<&mut dyn RngCore>) -> Result<Tensor> {
    let mut tape = Tape::new(&bundle.store);
    let fv = forward_tape(&mut tape, bundle, tokens, dropout, GateMode::Learned)?;
    Ok(tape.value(fv.probs).clone())
}

fn dropout_stream(seed: u64, epoch: usize, index: usize) -> rand_chacha::ChaCha8Rng {
    rng::stream(seed, &[rng::TAG_DROPOUT, epoch as u64, index as u64])
}

fn l2_active(bundle: &ModelBundle) -> bool {
    bundle.mode == Mode::B2 && bundle.config.l2_lambda != 0.0
}

fn example_pass(
    bundle: &ModelBundle,
    batch: &Batch,
    j: usize,
    dropout_epoch: Option<usize>,
    with_grads: bool,
) -> Result<(f64, Option<Gradients>)> {
    let mut tape = Tape::new(&bundle.store);
    let mut r = dropout_epoch.map(|e| dropout_stream(bundle.config.seed, e, batch.indices[j]));
    let fv = forward_tape(
        &mut tape,
        bundle,
        &batch.tokens[j],
        r.as_mut().map(|r| r as &mut dyn RngCore),
        GateMode::Learned,
    )?;
    let ce = tape.cross_entropy(fv.probs, batch.labels[j])?;
    let value = tape.value(ce).item();
    let grads = if with_grads { Some(tape.backward(ce)?) } else { None };
    Ok((value, grads))
}

fn chunked(
    bundle: &ModelBundle,
    batch: &Batch,
    dropout_epoch: Option<usize>,
    with_grads: bool,
    exec: Exec,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let n_chunks = batch.len().div_ceil(GRAD_CHUNK);
    let partials = exec.try_map_range(n_chunks, |c| {
        let mut sum = 0.0;
        let mut grads = Gradients::default();
        for j in c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(batch.len()) {
            let (v, g) = example_pass(bundle, batch, j, dropout_epoch, with_grads)?;
            sum += v;
            if let Some(g) = g {
                grads.accumulate(&g);
            }
        }
        Ok::<_, Error>((sum, grads))
    })?;
    let mut total = 0.0;
    let mut grads = Gradients::default();
    for (s, g) in &partials {
        total += s;
        grads.accumulate(g);
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    let mut loss = total * inv;

    if l2_active(bundle) {
        let mut tape = Tape::new(&bundle.store);
        let w = tape.param(bundle.classifier.weight);
        let sq = tape.squared_norm(w)?;
        let pen = tape.scale_const(sq, bundle.config.l2_lambda)?;
        loss += tape.value(pen).item();
        if with_grads {
            grads.accumulate(&tape.backward(pen)?);
        }
    }
    Ok((loss, grads))
}

/// Mean cross-entropy over the batch, plus `lambda * ||W||^2` in B2 mode.
/// `dropout_epoch` switches on training-time dropout keyed by
/// `(seed, epoch, example index)`.
pub fn batch_loss(bundle: &ModelBundle, batch: &Batch, dropout_epoch: Option<usize>, exec: Exec) -> Result<f64> {
    chunked(bundle, batch, dropout_epoch, false, exec).map(|(l, _)| l)
}

/// [`batch_loss`] and its gradient with respect to every reached parameter.
pub fn batch_loss_and_grads(
    bundle: &ModelBundle,
    batch: &Batch,
    dropout_epoch: Option<usize>,
    exec: Exec,
) -> Result<(f64, Gradients)> {
    chunked(bundle, batch, dropout_epoch, true, exec)
}
