//! Checkpoint files.
//!
//! Byte layout, all integers little-endian:
//!
//! | bytes        | content                                             |
//! |--------------|-----------------------------------------------------|
//! | 0..8         | magic `HYTNCKPT`                                    |
//! | 8..12        | format version (`u32`)                              |
//! | 12..16       | header length `n` (`u32`)                           |
//! | 16..16+n     | UTF-8 JSON header: config, vocabulary, label names, |
//! |              | tensor names and shapes                             |
//! | 16+n..       | tensor data as `f64`, row-major, in header order    |
//!
//! The file must end exactly after the last tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{EncoderParams, TENSOR_NAMES};
use super::{Classifier, ClassifierConfig, Vocabulary};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HYTNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct VocabRecord {
    chars: String,
    pad_id: u32,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ClassifierConfig,
    vocab: VocabRecord,
    labels: Vec<String>,
    tensors: Vec<TensorRecord>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn save_checkpoint(path: impl AsRef<Path>, clf: &Classifier) -> Result<()> {
    let path = path.as_ref();
    let tensors = clf.params.tensors();
    let header = Header {
        config: clf.config.clone(),
        vocab: VocabRecord {
            chars: clf.vocab.chars().iter().collect(),
            pad_id: clf.vocab.pad_id(),
        },
        labels: clf.label_names.clone(),
        tensors: tensors
            .iter()
            .map(|(name, shape, _)| TensorRecord {
                name: name.to_string(),
                shape: shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
    let mut bytes = Vec::with_capacity(16 + json.len() + 8 * clf.params.parameter_count());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, _, data) in &tensors {
        for v in data.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn expected_shapes(config: &ClassifierConfig, vocab_size: usize) -> [Vec<usize>; 16] {
    let (d, f, l, w) = (
        config.model_dim,
        config.ff_dim,
        config.labels,
        config.window,
    );
    [
        vec![vocab_size, d],
        vec![w, d],
        vec![d, d],
        vec![d, d],
        vec![d, d],
        vec![d, d],
        vec![d],
        vec![d],
        vec![d, f],
        vec![f],
        vec![f, d],
        vec![d],
        vec![d],
        vec![d],
        vec![d, l],
        vec![l],
    ]
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Classifier> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn decode(bytes: &[u8]) -> Result<Classifier> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32_at(bytes, 8);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let header_len = u32_at(bytes, 12) as usize;
    let body = &bytes[16..];
    if body.len() < header_len {
        return Err(bad("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&body[..header_len]).map_err(|e| bad(format!("header: {e}")))?;
    header.config.validate()?;
    if header.labels.len() != header.config.labels {
        return Err(bad("label list does not match the configured label count"));
    }
    let vocab = Vocabulary::new(header.vocab.chars.chars(), header.vocab.pad_id)?;
    if vocab.chars().len() != header.vocab.chars.chars().count() {
        return Err(bad("vocabulary has repeated characters"));
    }
    let shapes = expected_shapes(&header.config, vocab.len());
    if header.tensors.len() != TENSOR_NAMES.len() {
        return Err(bad(format!(
            "expected {} tensors, found {}",
            TENSOR_NAMES.len(),
            header.tensors.len()
        )));
    }
    for ((rec, name), shape) in header.tensors.iter().zip(TENSOR_NAMES).zip(&shapes) {
        if rec.name != name {
            return Err(bad(format!(
                "expected tensor `{name}`, found `{}`",
                rec.name
            )));
        }
        if &rec.shape != shape {
            return Err(bad(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                rec.shape, shape
            )));
        }
    }
    let data = &body[header_len..];
    let count: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if data.len() != 8 * count {
        return Err(bad(format!(
            "expected {} data bytes, found {}",
            8 * count,
            data.len()
        )));
    }
    let mut params = EncoderParams::init(&header.config, vocab.len(), 0);
    let mut offset = 0;
    for dst in params.tensors_mut() {
        for v in dst.iter_mut() {
            *v = f64::from_le_bytes(data[offset..offset + 8].try_into().expect("8 bytes"));
            offset += 8;
        }
    }
    if !params.all_finite() {
        return Err(bad("non-finite parameter values"));
    }
    Ok(Classifier {
        config: header.config,
        vocab,
        label_names: header.labels,
        params,
    })
}

/// Loads the parameters and checks them against `expected`. Every
/// structural setting (window, heads, dimensions, label count) must agree.
pub fn load_params(path: impl AsRef<Path>, expected: &ClassifierConfig) -> Result<EncoderParams> {
    let clf = load_checkpoint(path)?;
    let got = &clf.config;
    let pairs = [
        ("window", got.window, expected.window),
        ("heads", got.heads, expected.heads),
        ("model_dim", got.model_dim, expected.model_dim),
        ("ff_dim", got.ff_dim, expected.ff_dim),
        ("labels", got.labels, expected.labels),
    ];
    for (name, have, want) in pairs {
        if have != want {
            return Err(bad(format!(
                "{name} is {have} in the checkpoint, expected {want}"
            )));
        }
    }
    Ok(clf.params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Classifier {
        let config = ClassifierConfig {
            window: 5,
            heads: 2,
            model_dim: 4,
            ff_dim: 6,
            labels: 3,
            ..Default::default()
        };
        let vocab = Vocabulary::new("abc".chars(), 1).unwrap();
        let params = EncoderParams::init(&config, vocab.len(), 4);
        Classifier {
            config,
            vocab,
            label_names: vec!["x".into(), "y".into(), "z".into()],
            params,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let clf = tiny();
        clf.save(&path).unwrap();
        let back = Classifier::load(&path).unwrap();
        assert_eq!(back, clf);
        assert_eq!(load_params(&path, &clf.config).unwrap(), clf.params);
    }

    #[test]
    fn wrong_label_count_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let clf = tiny();
        clf.save(&path).unwrap();
        let mut other = clf.config.clone();
        other.labels = 4;
        assert!(matches!(
            load_params(&path, &other),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn truncated_and_corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        tiny().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for cut in [0, 7, 15, 40, bytes.len() - 1] {
            std::fs::write(&path, &bytes[..cut]).unwrap();
            assert!(
                matches!(Classifier::load(&path), Err(Error::Checkpoint(_))),
                "cut {cut}"
            );
        }
        let mut extra = bytes.clone();
        extra.push(0);
        std::fs::write(&path, &extra).unwrap();
        assert!(Classifier::load(&path).is_err());
        let mut versioned = bytes.clone();
        versioned[8] = 9;
        std::fs::write(&path, &versioned).unwrap();
        let err = Classifier::load(&path).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }
}
