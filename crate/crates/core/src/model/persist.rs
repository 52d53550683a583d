//! Model file layout: the magic `MCFA1`, a little-endian `u64` header length,
//! a JSON header, then every tensor's data as little-endian `f64` in header
//! order. Values round-trip bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Classifier, Mode, ModelBundle, TrainConfig};
use crate::data::Vocabulary;
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::mcfa::McfaParams;
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 5] = b"MCFA1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    mode: Mode,
    view_names: Vec<String>,
    n_classes: usize,
    encoder: EncoderConfig,
    config: TrainConfig,
    vocabs: Vec<Vocabulary>,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes(bundle: &ModelBundle) -> Result<Vec<u8>> {
    let header = Header {
        mode: bundle.mode,
        view_names: bundle.view_names.clone(),
        n_classes: bundle.n_classes,
        encoder: bundle.encoder.clone(),
        config: bundle.config.clone(),
        vocabs: bundle.vocabs.clone(),
        tensors: bundle
            .store
            .iter()
            .map(|(_, p)| TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let n_values: usize = bundle.store.iter().map(|(_, p)| p.value.len()).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + 8 * n_values);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in bundle.store.iter() {
        for x in p.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save(bundle: &ModelBundle, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(bundle)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelBundle> {
    load_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn load_bytes(bytes: &[u8]) -> Result<ModelBundle> {
    let expected = String::from_utf8_lossy(MAGIC);
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        let tag = &bytes[..bytes.len().min(MAGIC.len())];
        return Err(if tag.starts_with(b"MCFA") {
            Error::Format(format!(
                "unsupported version tag {:?}, expected {expected}",
                String::from_utf8_lossy(tag)
            ))
        } else {
            Error::Format(format!("not a model file: missing {expected} tag"))
        });
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 8 {
        return Err(Error::Corrupt("truncated before header length".into()));
    }
    let header_len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes"));
    let rest = &rest[8..];
    let header_len = usize::try_from(header_len)
        .ok()
        .filter(|&n| n <= rest.len())
        .ok_or_else(|| Error::Corrupt(format!("header claims {header_len} bytes, {} remain", rest.len())))?;
    let header: Header =
        serde_json::from_slice(&rest[..header_len]).map_err(|e| Error::Corrupt(format!("bad header: {e}")))?;
    let blob = &rest[header_len..];

    let expected_values = header
        .tensors
        .iter()
        .try_fold(0usize, |acc, t| acc.checked_add(t.shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d))?))
        .ok_or_else(|| Error::Corrupt("tensor sizes overflow".into()))?;
    if blob.len() != expected_values.saturating_mul(8) {
        return Err(Error::Corrupt(format!(
            "tensor data is {} bytes, header describes {}",
            blob.len(),
            expected_values.saturating_mul(8)
        )));
    }

    let mut store = ParamStore::new();
    let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        let tensor = Tensor::new(t.shape.clone(), data).map_err(|e| Error::Corrupt(e.to_string()))?;
        let id = store.add(t.name.clone(), tensor);
        store.set_trainable(id, t.trainable);
    }
    assemble(header, store)
}

fn assemble(h: Header, store: ParamStore) -> Result<ModelBundle> {
    let corrupt = |m: String| Error::Corrupt(m);
    let n_views = h.view_names.len();
    if h.vocabs.len() != n_views || n_views == 0 {
        return Err(corrupt(format!("{} vocabularies for {n_views} views", h.vocabs.len())));
    }
    h.encoder.validate().map_err(|e| corrupt(e.to_string()))?;
    let d = h.encoder.output_width();
    let find = |name: &str| store.find(name).ok_or_else(|| corrupt(format!("missing tensor {name}")));
    let expect = |name: &str, shape: &[usize]| -> Result<()> {
        let id = find(name)?;
        if store.get(id).shape() != shape {
            return Err(corrupt(format!("tensor {name} has shape {:?}, expected {shape:?}", store.get(id).shape())));
        }
        Ok(())
    };

    let mut encoders = Vec::with_capacity(n_views);
    for v in 0..n_views {
        let prefix = format!("view{v}");
        let p = EncoderParams::find(&store, &prefix, &h.encoder).map_err(|e| corrupt(e.to_string()))?;
        expect(&format!("{prefix}.embedding"), &[h.vocabs[v].len(), h.encoder.d_word])?;
        for &w in &h.encoder.windows {
            expect(&format!("{prefix}.conv{w}.weight"), &[h.encoder.n_maps, w * h.encoder.d_word])?;
            expect(&format!("{prefix}.conv{w}.bias"), &[h.encoder.n_maps])?;
        }
        encoders.push(p);
    }
    expect("classifier.weight", &[h.n_classes, n_views * d])?;
    expect("classifier.bias", &[h.n_classes])?;
    let classifier = Classifier {
        weight: find("classifier.weight")?,
        bias: find("classifier.bias")?,
    };
    let mcfa = match h.mode {
        Mode::Mcfa => {
            for k in 0..n_views {
                expect(&format!("mcfa.view{k}.self_scorer"), &[d, 1])?;
                expect(&format!("mcfa.view{k}.attention_proj"), &[d, d])?;
                expect(&format!("mcfa.view{k}.context_proj"), &[d, d])?;
                expect(&format!("mcfa.view{k}.gate"), &[2 * d, d])?;
            }
            expect("mcfa.scorer", &[d, 1])?;
            Some(McfaParams::find(&store, n_views).map_err(|e| corrupt(e.to_string()))?)
        }
        _ => None,
    };
    Ok(ModelBundle {
        mode: h.mode,
        view_names: h.view_names,
        vocabs: h.vocabs,
        n_classes: h.n_classes,
        encoder: h.encoder,
        config: h.config,
        store,
        encoders,
        mcfa,
        classifier,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{tiny_dataset, tiny_encoder};

    fn bundle(mode: Mode) -> ModelBundle {
        ModelBundle::init(mode, &tiny_dataset(2), tiny_encoder(), TrainConfig::default(), None).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for mode in [Mode::B1, Mode::B2, Mode::Mcfa] {
            let mut b = bundle(mode);
            b.store.get_mut(b.classifier.bias).data_mut()[0] = 0.1 + 0.2;
            let back = load_bytes(&to_bytes(&b).unwrap()).unwrap();
            assert_eq!(back, b);
            for ((_, p), (_, q)) in b.store.iter().zip(back.store.iter()) {
                let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&p.value), bits(&q.value));
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let b = bundle(Mode::Mcfa);
        save(&b, &path).unwrap();
        assert_eq!(load(&path).unwrap(), b);
    }

    #[test]
    fn wrong_version_names_expected_tag() {
        let mut bytes = to_bytes(&bundle(Mode::B1)).unwrap();
        bytes[4] = b'9';
        let err = load_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(err.to_string().contains("MCFA1"), "{err}");
        assert!(matches!(load_bytes(b"hello world"), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_is_corruption() {
        let bytes = to_bytes(&bundle(Mode::Mcfa)).unwrap();
        for cut in [6, 13, 40, bytes.len() - 1] {
            assert!(matches!(load_bytes(&bytes[..cut]), Err(Error::Corrupt(_))), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(load_bytes(&extra), Err(Error::Corrupt(_))));
    }

    #[test]
    fn header_shape_mismatch_is_corruption() {
        let b = bundle(Mode::B1);
        let bytes = to_bytes(&b).unwrap();
        let len = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
        let header = String::from_utf8(bytes[13..13 + len].to_vec()).unwrap();
        // swap the classifier weight's dimensions; byte count stays the same
        let w = b.store.get(b.classifier.weight).shape().to_vec();
        let from = format!("\"classifier.weight\",\"shape\":[{},{}]", w[0], w[1]);
        let to = format!("\"classifier.weight\",\"shape\":[{},{}]", w[1], w[0]);
        assert!(header.contains(&from));
        let header = header.replace(&from, &to);
        let mut forged = MAGIC.to_vec();
        forged.extend_from_slice(&(header.len() as u64).to_le_bytes());
        forged.extend_from_slice(header.as_bytes());
        forged.extend_from_slice(&bytes[13 + len..]);
        assert!(matches!(load_bytes(&forged), Err(Error::Corrupt(_))));
    }
}
