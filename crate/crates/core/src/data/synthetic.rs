//! Seeded multi-view toy corpora in which each view carries the class signal
//! for only some classes.
//!
//! Every view has its own token inventory: `signal_tokens` per informative
//! class plus `filler_tokens` shared by all classes. An example of class `c`
//! gets `signals_per_sentence` of class `c`'s signal tokens in each view that
//! is informative for `c`, and filler only elsewhere. Noise then replaces each
//! token independently with probability `noise_rate[view]` by a uniform draw
//! from the whole view inventory, which can both erase real signal and
//! inject misleading signal.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{RawCorpus, RawExample};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_views: usize,
    pub n_classes: usize,
    pub n_examples: usize,
    /// For each view, the classes it is informative for.
    pub informative: Vec<Vec<usize>>,
    /// Per-view corruption probability.
    pub noise_rate: Vec<f64>,
    pub seed: u64,
    pub signal_tokens: usize,
    pub filler_tokens: usize,
    pub signals_per_sentence: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl SyntheticConfig {
    /// Defaults for everything but the view/class layout.
    pub fn new(n_classes: usize, n_examples: usize, informative: Vec<Vec<usize>>, noise_rate: Vec<f64>, seed: u64) -> Self {
        SyntheticConfig {
            n_views: informative.len(),
            n_classes,
            n_examples,
            informative,
            noise_rate,
            seed,
            signal_tokens: 4,
            filler_tokens: 24,
            signals_per_sentence: 2,
            min_len: 6,
            max_len: 12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_views == 0 || self.n_classes == 0 {
            return bad("synthetic data needs at least one view and one class".into());
        }
        if self.informative.len() != self.n_views || self.noise_rate.len() != self.n_views {
            return bad(format!(
                "informative ({}) and noise_rate ({}) must list all {} views",
                self.informative.len(),
                self.noise_rate.len(),
                self.n_views
            ));
        }
        if let Some(c) = self.informative.iter().flatten().find(|&&c| c >= self.n_classes) {
            return bad(format!("informative class {c} >= n_classes {}", self.n_classes));
        }
        for c in 0..self.n_classes {
            if !self.informative.iter().any(|v| v.contains(&c)) {
                return bad(format!("class {c} is informative in no view"));
            }
        }
        if self.noise_rate.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("noise_rate entries must lie in [0, 1]".into());
        }
        if self.min_len == 0 || self.min_len > self.max_len || self.signals_per_sentence > self.min_len {
            return bad(format!(
                "need 0 < signals_per_sentence <= min_len <= max_len, got {} / {} / {}",
                self.signals_per_sentence, self.min_len, self.max_len
            ));
        }
        if self.filler_tokens == 0 || self.signal_tokens == 0 {
            return bad("token inventories must be non-empty".into());
        }
        Ok(())
    }

    pub fn view_name(v: usize) -> String {
        if v == 0 {
            "src".to_string()
        } else {
            format!("t{v}")
        }
    }
}

fn signal_token(view: usize, class: usize, j: usize) -> String {
    format!("v{view}c{class}s{j}")
}

fn filler_token(view: usize, j: usize) -> String {
    format!("v{view}f{j}")
}

pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<RawCorpus> {
    cfg.validate()?;
    let mut labels: Vec<usize> = (0..cfg.n_examples).map(|i| i % cfg.n_classes).collect();
    labels.shuffle(&mut rng::stream(cfg.seed, &[rng::TAG_SYNTH, 0]));

    let inventories: Vec<Vec<String>> = (0..cfg.n_views)
        .map(|v| {
            let mut inv: Vec<String> = (0..cfg.filler_tokens).map(|j| filler_token(v, j)).collect();
            for &c in &cfg.informative[v] {
                inv.extend((0..cfg.signal_tokens).map(|j| signal_token(v, c, j)));
            }
            inv
        })
        .collect();

    let examples = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let views = (0..cfg.n_views)
                .map(|v| {
                    let mut r = rng::stream(cfg.seed, &[rng::TAG_SYNTH, 1, i as u64, v as u64]);
                    let len = r.gen_range(cfg.min_len..=cfg.max_len);
                    let mut toks: Vec<String> = (0..len)
                        .map(|_| filler_token(v, r.gen_range(0..cfg.filler_tokens)))
                        .collect();
                    if cfg.informative[v].contains(&label) {
                        let mut slots: Vec<usize> = (0..len).collect();
                        slots.shuffle(&mut r);
                        for &s in &slots[..cfg.signals_per_sentence] {
                            toks[s] = signal_token(v, label, r.gen_range(0..cfg.signal_tokens));
                        }
                    }
                    let rate = cfg.noise_rate[v];
                    for t in toks.iter_mut() {
                        if rate > 0.0 && r.gen::<f64>() < rate {
                            *t = inventories[v].choose(&mut r).expect("non-empty").clone();
                        }
                    }
                    toks
                })
                .collect();
            RawExample { label, views }
        })
        .collect();

    Ok(RawCorpus {
        view_names: (0..cfg.n_views).map(SyntheticConfig::view_name).collect(),
        examples,
    })
}
