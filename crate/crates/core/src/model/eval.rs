use super::forward::{forward, inference_tokens};
use super::ModelBundle;
use crate::data::{Dataset, MultiViewExample};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numerics::{argmax, Tensor};

/// How a dataset's views and token ids line up with a bundle's.
///
/// Views are matched by name. When the dataset was indexed with a different
/// vocabulary, ids are translated through the token strings.
#[derive(Clone, Debug)]
pub struct ViewMapping {
    columns: Vec<usize>,
    translate: Vec<Option<Vec<usize>>>,
}

impl ViewMapping {
    pub fn new(bundle: &ModelBundle, dataset: &Dataset) -> Result<Self> {
        if dataset.n_classes > bundle.n_classes {
            return Err(Error::Format(format!(
                "dataset has {} classes, model has {}",
                dataset.n_classes, bundle.n_classes
            )));
        }
        let mut columns = Vec::with_capacity(bundle.n_views());
        let mut translate = Vec::with_capacity(bundle.n_views());
        for (name, vocab) in bundle.view_names.iter().zip(&bundle.vocabs) {
            let col = dataset
                .view_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Format(format!("dataset has no view named {name:?}")))?;
            let dv = &dataset.vocabs[col];
            translate.push((dv != vocab).then(|| dv.tokens().iter().map(|t| vocab.id(t)).collect()));
            columns.push(col);
        }
        Ok(ViewMapping { columns, translate })
    }

    /// The example's ids in the bundle's vocabulary, unpadded.
    pub fn tokens(&self, ex: &MultiViewExample) -> Vec<Vec<usize>> {
        self.columns
            .iter()
            .zip(&self.translate)
            .map(|(&c, tr)| match tr {
                Some(tr) => ex.tokens[c].iter().map(|&t| tr[t]).collect(),
                None => ex.tokens[c].clone(),
            })
            .collect()
    }
}

/// Inference probabilities for one example in the bundle's own view order
/// and ids. Views are padded per example, so the result never depends on
/// what else is being evaluated.
pub fn predict_proba(bundle: &ModelBundle, tokens: &[Vec<usize>]) -> Result<Tensor> {
    forward(bundle, &inference_tokens(bundle, tokens), None)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub index: usize,
    pub label: usize,
    pub predicted: usize,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<Prediction>,
}

impl Evaluation {
    fn from_predictions(predictions: Vec<Prediction>) -> Self {
        let correct = predictions.iter().filter(|p| p.label == p.predicted).count();
        Evaluation {
            accuracy: correct as f64 / predictions.len() as f64,
            predictions,
        }
    }
}

fn check_indices(dataset: &Dataset, indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::Invalid("evaluation over an empty example list".into()));
    }
    if let Some(&i) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::Invalid(format!("example index {i} out of range for {} examples", dataset.len())));
    }
    Ok(())
}

/// Accuracy of argmax predictions (lowest class on ties).
pub fn evaluate(bundle: &ModelBundle, dataset: &Dataset, indices: &[usize], exec: Exec) -> Result<Evaluation> {
    check_indices(dataset, indices)?;
    let mapping = ViewMapping::new(bundle, dataset)?;
    let predictions = exec.try_map_range(indices.len(), |k| {
        let ex = &dataset.examples[indices[k]];
        let p = predict_proba(bundle, &mapping.tokens(ex))?;
        Ok::<_, Error>(Prediction {
            index: indices[k],
            label: ex.label,
            predicted: argmax(p.data()),
            probs: p.into_data(),
        })
    })?;
    Ok(Evaluation::from_predictions(predictions))
}

fn check_members(bundles: &[&ModelBundle]) -> Result<usize> {
    let first = bundles.first().ok_or_else(|| Error::Invalid("empty ensemble".into()))?;
    for b in &bundles[1..] {
        if b.n_classes != first.n_classes {
            return Err(Error::Invalid(format!(
                "ensemble members disagree on class count: {} vs {}",
                first.n_classes, b.n_classes
            )));
        }
    }
    Ok(first.n_classes)
}

/// Mean of the members' probability vectors.
pub fn ensemble_predict(bundles: &[&ModelBundle], dataset: &Dataset, index: usize) -> Result<Tensor> {
    let mappings = bundles
        .iter()
        .map(|b| ViewMapping::new(b, dataset))
        .collect::<Result<Vec<_>>>()?;
    ensemble_one(bundles, &mappings, &dataset.examples[index])
}

fn ensemble_one(bundles: &[&ModelBundle], mappings: &[ViewMapping], ex: &MultiViewExample) -> Result<Tensor> {
    check_members(bundles)?;
    let probs = bundles
        .iter()
        .zip(mappings)
        .map(|(b, m)| predict_proba(b, &m.tokens(ex)))
        .collect::<Result<Vec<_>>>()?;
    average_probabilities(&probs)
}

/// Elementwise mean of equally sized probability vectors.
pub fn average_probabilities(probs: &[Tensor]) -> Result<Tensor> {
    let first = probs.first().ok_or_else(|| Error::Invalid("empty ensemble".into()))?;
    let mut acc = Tensor::zeros(first.shape());
    for p in probs {
        if p.shape() != first.shape() {
            return Err(Error::Invalid(format!(
                "ensemble members disagree on class count: {} vs {}",
                first.len(),
                p.len()
            )));
        }
        acc.add_assign(p)?;
    }
    acc.scale_in_place(1.0 / probs.len() as f64);
    Ok(acc)
}

pub fn ensemble_evaluate(
    bundles: &[&ModelBundle],
    dataset: &Dataset,
    indices: &[usize],
    exec: Exec,
) -> Result<Evaluation> {
    check_members(bundles)?;
    check_indices(dataset, indices)?;
    let mappings = bundles
        .iter()
        .map(|b| ViewMapping::new(b, dataset))
        .collect::<Result<Vec<_>>>()?;
    let predictions = exec.try_map_range(indices.len(), |k| {
        let ex = &dataset.examples[indices[k]];
        let p = ensemble_one(bundles, &mappings, ex)?;
        Ok::<_, Error>(Prediction {
            index: indices[k],
            label: ex.label,
            predicted: argmax(p.data()),
            probs: p.into_data(),
        })
    })?;
    Ok(Evaluation::from_predictions(predictions))
}
