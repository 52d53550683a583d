//! Classifier assembly for the three feature modes, training, evaluation,
//! ensembling and persistence.

mod eval;
mod forward;
mod persist;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use eval::{average_probabilities, ensemble_evaluate, ensemble_predict, evaluate, predict_proba, Evaluation, Prediction, ViewMapping};
pub use forward::{
    batch_loss, batch_loss_and_grads, forward, forward_tape, inference_tokens, ForwardVars, GRAD_CHUNK,
};
pub use persist::{load, load_bytes, save, to_bytes, MAGIC};
pub use train::{train, train_observed, write_log, StepInfo, TrainLogRow, TrainOutcome};

use crate::data::{Dataset, EmbeddingTable, Vocabulary};
use crate::encoder::{glorot_uniform, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::mcfa::McfaParams;
use crate::numerics::{AdadeltaConfig, ParamId, ParamStore, Tensor};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Concatenate the raw view vectors.
    B1,
    /// Like `B1`, with an L2 penalty on the classifier weights.
    B2,
    /// Fix every view vector with the attachment before concatenating.
    Mcfa,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::B1 => "b1",
            Mode::B2 => "b2",
            Mode::Mcfa => "mcfa",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "b1" => Ok(Mode::B1),
            "b2" => Ok(Mode::B2),
            "mcfa" => Ok(Mode::Mcfa),
            other => Err(Error::Config(format!("unknown mode {other:?} (expected b1, b2 or mcfa)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub max_norm: f64,
    pub adadelta: AdadeltaConfig,
    /// Only used by [`Mode::B2`].
    pub l2_lambda: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub dev_fraction: f64,
    pub static_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 50,
            dropout_rate: 0.5,
            max_norm: 3.0,
            adadelta: AdadeltaConfig::default(),
            l2_lambda: 1e-4,
            max_epochs: 50,
            patience: 10,
            seed: 0,
            dev_fraction: 0.10,
            static_embeddings: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if !(self.max_norm > 0.0) {
            return bad(format!("max_norm must be > 0, got {}", self.max_norm));
        }
        if !(self.l2_lambda >= 0.0) {
            return bad(format!("l2_lambda must be >= 0, got {}", self.l2_lambda));
        }
        if self.patience == 0 || self.max_epochs == 0 {
            return bad("patience and max_epochs must be >= 1".into());
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 0.5) {
            return bad(format!("dev_fraction must be in (0, 0.5), got {}", self.dev_fraction));
        }
        self.adadelta.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Classifier {
    /// `[n_classes x feature_width]`; one row per class so the max-norm
    /// constraint applies to each class's weight vector.
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Everything needed to run and persist one trained classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub mode: Mode,
    pub view_names: Vec<String>,
    pub vocabs: Vec<Vocabulary>,
    pub n_classes: usize,
    pub encoder: EncoderConfig,
    pub config: TrainConfig,
    pub store: ParamStore,
    pub encoders: Vec<EncoderParams>,
    pub mcfa: Option<McfaParams>,
    pub classifier: Classifier,
}

impl ModelBundle {
    /// Fresh parameters for `dataset`'s views and classes. Missing
    /// `embeddings` are drawn from U(-0.25, 0.25).
    ///
    /// Encoders and the classifier use streams independent of the mode, so
    /// every mode starts from the same encoder and classifier weights.
    pub fn init(
        mode: Mode,
        dataset: &Dataset,
        encoder: EncoderConfig,
        config: TrainConfig,
        embeddings: Option<Vec<EmbeddingTable>>,
    ) -> Result<Self> {
        config.validate()?;
        encoder.validate()?;
        if dataset.n_views() == 0 || dataset.n_classes < 2 {
            return Err(Error::Config(format!(
                "need at least one view and two classes, got {} views and {} classes",
                dataset.n_views(),
                dataset.n_classes
            )));
        }
        let n_views = dataset.n_views();
        let embeddings = match embeddings {
            Some(e) if e.len() == n_views => e,
            Some(e) => {
                return Err(Error::Config(format!("{} embedding tables for {n_views} views", e.len())));
            }
            None => (0..n_views)
                .map(|v| EmbeddingTable::random(v, dataset.vocabs[v].len(), encoder.d_word, config.seed))
                .collect(),
        };

        let mut store = ParamStore::new();
        let mut encoders = Vec::with_capacity(n_views);
        for (v, table) in embeddings.into_iter().enumerate() {
            if table.matrix.rows() != dataset.vocabs[v].len() {
                return Err(Error::Config(format!(
                    "view {v}: embedding has {} rows for a vocabulary of {}",
                    table.matrix.rows(),
                    dataset.vocabs[v].len()
                )));
            }
            let mut r = rng::stream(config.seed, &[rng::TAG_INIT, 0, v as u64]);
            let p = EncoderParams::register(&mut store, &format!("view{v}"), &encoder, table.matrix, &mut r)?;
            if config.static_embeddings {
                store.set_trainable(p.embedding, false);
            }
            encoders.push(p);
        }

        let d = encoder.output_width();
        let width = n_views * d;
        let mut r = rng::stream(config.seed, &[rng::TAG_INIT, 2]);
        let classifier = Classifier {
            weight: store.add(
                "classifier.weight",
                glorot_uniform(dataset.n_classes, width, width, dataset.n_classes, &mut r),
            ),
            bias: store.add("classifier.bias", Tensor::zeros(&[dataset.n_classes])),
        };
        let mcfa = (mode == Mode::Mcfa).then(|| {
            let mut r = rng::stream(config.seed, &[rng::TAG_INIT, 1]);
            McfaParams::register(&mut store, d, n_views, &mut r)
        });

        Ok(ModelBundle {
            mode,
            view_names: dataset.view_names.clone(),
            vocabs: dataset.vocabs.clone(),
            n_classes: dataset.n_classes,
            encoder,
            config,
            store,
            encoders,
            mcfa,
            classifier,
        })
    }

    pub fn n_views(&self) -> usize {
        self.view_names.len()
    }

    pub fn feature_width(&self) -> usize {
        self.n_views() * self.encoder.output_width()
    }

    /// Shortest padded length the encoder accepts.
    pub fn min_len(&self) -> usize {
        self.encoder.max_window().max(crate::data::MIN_PADDED_LEN)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
    }

    /// Zeroes the classifier, giving uniform predictions.
    pub fn zero_classifier(&mut self) {
        self.store.get_mut(self.classifier.weight).data_mut().fill(0.0);
        self.store.get_mut(self.classifier.bias).data_mut().fill(0.0);
    }
}
