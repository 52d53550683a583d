//! Convolutional sentence encoder: filters over word windows, ReLU,
//! max-over-time pooling, and concatenation of the pooled maps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::PAD;
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_word: usize,
    pub n_maps: usize,
    pub windows: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_word: 300,
            n_maps: 100,
            windows: vec![3, 4, 5],
        }
    }
}

impl EncoderConfig {
    /// Width of the sentence vector.
    pub fn output_width(&self) -> usize {
        self.n_maps * self.windows.len()
    }

    pub fn max_window(&self) -> usize {
        self.windows.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_word == 0 || self.n_maps == 0 || self.windows.is_empty() || self.windows.contains(&0) {
            return Err(Error::Config(format!("degenerate encoder config {self:?}")));
        }
        Ok(())
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::matrix(rows, cols, data).expect("sized")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilterBank {
    pub window: usize,
    /// `[n_maps x window * d_word]`
    pub weight: ParamId,
    /// `[n_maps]`
    pub bias: ParamId,
}

/// Parameter handles for one view's encoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderParams {
    pub embedding: ParamId,
    pub banks: Vec<FilterBank>,
}

impl EncoderParams {
    /// Adds the embedding table and freshly initialized filters to `store`.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        embedding: Tensor,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        if embedding.cols() != cfg.d_word || embedding.rank() != 2 {
            return Err(Error::shape("encoder embedding", embedding.shape(), &[0, cfg.d_word]));
        }
        let embedding = store.add(format!("{prefix}.embedding"), embedding);
        let banks = cfg
            .windows
            .iter()
            .map(|&h| {
                let fan_in = h * cfg.d_word;
                let w = glorot_uniform(cfg.n_maps, fan_in, fan_in, cfg.n_maps, rng);
                FilterBank {
                    window: h,
                    weight: store.add(format!("{prefix}.conv{h}.weight"), w),
                    bias: store.add(format!("{prefix}.conv{h}.bias"), Tensor::zeros(&[cfg.n_maps])),
                }
            })
            .collect();
        Ok(EncoderParams { embedding, banks })
    }

    /// Looks handles up by the names `register` assigns.
    pub fn find(store: &ParamStore, prefix: &str, cfg: &EncoderConfig) -> Result<Self> {
        let get = |name: String| store.find(&name).ok_or_else(|| Error::Format(format!("missing tensor {name}")));
        Ok(EncoderParams {
            embedding: get(format!("{prefix}.embedding"))?,
            banks: cfg
                .windows
                .iter()
                .map(|&h| {
                    Ok(FilterBank {
                        window: h,
                        weight: get(format!("{prefix}.conv{h}.weight"))?,
                        bias: get(format!("{prefix}.conv{h}.bias"))?,
                    })
                })
                .collect::<Result<_>>()?,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.embedding];
        for b in &self.banks {
            v.push(b.weight);
            v.push(b.bias);
        }
        v
    }
}

/// `ReLU(W · window_t + b)` for every window start `t`: `[n_maps x (L - h + 1)]`.
pub fn conv_feature_map(
    tape: &mut Tape<'_>,
    table: Var,
    tokens: &[usize],
    bank: &FilterBank,
) -> Result<Var> {
    let windows = tape.gather_windows(table, tokens, bank.window, Some(PAD))?;
    let w = tape.param(bank.weight);
    let b = tape.param(bank.bias);
    let pre = tape.matmul(w, windows)?;
    let pre = tape.add_col_bias(pre, b)?;
    tape.relu(pre)
}

/// Sentence vector: pooled maps for each window size in config order, with
/// an optional dropout mask applied to the concatenation.
pub fn encode(
    tape: &mut Tape<'_>,
    params: &EncoderParams,
    tokens: &[usize],
    dropout_mask: Option<Tensor>,
) -> Result<Var> {
    let table = tape.param(params.embedding);
    let mut pooled = Vec::with_capacity(params.banks.len());
    for bank in &params.banks {
        let map = conv_feature_map(tape, table, tokens, bank)?;
        pooled.push(tape.max_over_time(map)?);
    }
    let v = tape.concat(&pooled)?;
    match dropout_mask {
        Some(mask) => tape.dropout(v, mask),
        None => Ok(v),
    }
}

/// Inference-only convenience around [`encode`].
pub fn encode_values(store: &ParamStore, params: &EncoderParams, tokens: &[usize]) -> Result<Tensor> {
    let mut tape = Tape::new(store);
    let v = encode(&mut tape, params, tokens, None)?;
    Ok(tape.value(v).clone())
}
