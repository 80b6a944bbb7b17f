//! Loss over batches, gradients and the training loop.
//!
//! Optimizer: Adam (beta1 0.9, beta2 0.999, eps 1e-8) at the configured
//! learning rate, mini-batches drawn from a seeded per-epoch shuffle. Each
//! batch is cut into fixed chunks whose gradients are computed in parallel
//! and summed in chunk order, so results do not depend on the thread count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::encoder::{backward, forward};
use super::loss::{focal_loss, focal_loss_grad, masked_softmax};
use super::params::EncoderParams;
use super::{
    argmax, import_vectors, window_padding, Classifier, ClassifierConfig, Vocabulary, WindowMode,
};
use crate::corpus::LabeledSentence;
use crate::error::{Error, Result};
use crate::labels::Taxonomy;
use crate::legality::FormatRegistry;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const CHUNK: usize = 8;

/// One NSW ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub ids: Vec<u32>,
    pub padding: Vec<bool>,
    pub nsw_mask: Vec<bool>,
    /// Format legality of the surface, one flag per label.
    pub legal: Vec<bool>,
    pub target: usize,
}

/// Forward-pass results for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub legal_masks: Vec<Vec<bool>>,
    pub targets: Vec<usize>,
    /// Masked-softmax output, one row per sample.
    pub probabilities: Vec<Vec<f64>>,
}

impl TrainingBatch {
    pub fn forward(
        params: &EncoderParams,
        samples: &[EncodedSample],
        config: &ClassifierConfig,
    ) -> Result<Self> {
        let mut probabilities = Vec::with_capacity(samples.len());
        for s in samples {
            let fwd = forward(params, &s.ids, &s.padding, &s.nsw_mask);
            probabilities.push(masked_softmax(&fwd.logits, &effective_mask(s, config))?);
        }
        Ok(Self {
            legal_masks: samples.iter().map(|s| s.legal.clone()).collect(),
            targets: samples.iter().map(|s| s.target).collect(),
            probabilities,
        })
    }
}

fn effective_mask(sample: &EncodedSample, config: &ClassifierConfig) -> Vec<bool> {
    if config.use_mask {
        sample.legal.clone()
    } else {
        vec![true; sample.legal.len()]
    }
}

fn check_target(legal: &[bool], target: usize) -> Result<()> {
    match legal.get(target) {
        Some(true) => Ok(()),
        Some(false) => Err(Error::Validation(format!(
            "target label {target} is illegal for its NSW"
        ))),
        None => Err(Error::Validation(format!(
            "target label {target} out of range"
        ))),
    }
}

/// Mean focal loss of the target probabilities.
pub fn batch_loss(batch: &TrainingBatch, config: &ClassifierConfig) -> Result<f64> {
    if batch.targets.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let mut total = 0.0;
    for ((p, legal), &t) in batch
        .probabilities
        .iter()
        .zip(&batch.legal_masks)
        .zip(&batch.targets)
    {
        check_target(legal, t)?;
        total += focal_loss(p[t], true, config.focal_alpha, config.focal_gamma);
    }
    Ok(total / batch.targets.len() as f64)
}

/// Loss of one sample.
pub fn sample_loss(
    params: &EncoderParams,
    sample: &EncodedSample,
    config: &ClassifierConfig,
) -> Result<f64> {
    batch_loss(
        &TrainingBatch::forward(params, std::slice::from_ref(sample), config)?,
        config,
    )
}

/// Adds `weight * d loss / d params` for one sample to `grads`. Returns the
/// unweighted loss and whether the argmax hit the target.
pub fn sample_gradient(
    params: &EncoderParams,
    sample: &EncodedSample,
    config: &ClassifierConfig,
    weight: f64,
    grads: &mut EncoderParams,
) -> Result<(f64, bool)> {
    check_target(&sample.legal, sample.target)?;
    let mask = effective_mask(sample, config);
    let fwd = forward(params, &sample.ids, &sample.padding, &sample.nsw_mask);
    let p = masked_softmax(&fwd.logits, &mask)?;
    let t = sample.target;
    let loss = focal_loss(p[t], true, config.focal_alpha, config.focal_gamma);
    let g = weight * focal_loss_grad(p[t], config.focal_alpha, config.focal_gamma);
    let dlogits: Vec<f64> = (0..p.len())
        .map(|j| {
            if !mask[j] {
                0.0
            } else {
                let delta = if j == t { 1.0 } else { 0.0 };
                g * p[t] * (delta - p[j])
            }
        })
        .collect();
    backward(params, &fwd, &dlogits, grads);
    Ok((loss, argmax(&p) == t))
}

/// One sample per labelled span. Unlabelled spans are an error.
pub fn encode_corpus(
    corpus: &[LabeledSentence],
    config: &ClassifierConfig,
    vocab: &Vocabulary,
    formats: &FormatRegistry,
) -> Result<Vec<EncodedSample>> {
    let mut out = Vec::new();
    for (i, sentence) in corpus.iter().enumerate() {
        for span in &sentence.spans {
            let label = span.label.ok_or_else(|| {
                Error::Validation(format!(
                    "sentence {}: span [{}, {}) has no label",
                    i + 1,
                    span.start,
                    span.end
                ))
            })?;
            if label.index() >= config.labels {
                return Err(Error::UnknownLabel(label.to_string()));
            }
            let window = config.sentence_window(sentence, span);
            let legal = formats.legal_labels(&sentence.surface(span));
            check_target(&legal, label.index()).map_err(|_| {
                Error::Validation(format!(
                    "sentence {}: `{}` does not have the format of its label",
                    i + 1,
                    sentence.surface(span)
                ))
            })?;
            out.push(EncodedSample {
                ids: vocab.encode(&window),
                padding: window_padding(&window),
                nsw_mask: window.nsw_mask,
                legal,
                target: label.index(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    /// Training accuracy measured during the epoch.
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub params: EncoderParams,
    pub log: Vec<EpochLog>,
}

/// [`train_with`] without a progress callback.
pub fn train(
    corpus: &[LabeledSentence],
    config: &ClassifierConfig,
    vocab: &Vocabulary,
    formats: &FormatRegistry,
) -> Result<TrainingOutcome> {
    train_with(corpus, config, vocab, formats, |_| {})
}

/// Trains from the seeded initialization. `config.labels` must already be
/// resolved to the registry size.
pub fn train_with(
    corpus: &[LabeledSentence],
    config: &ClassifierConfig,
    vocab: &Vocabulary,
    formats: &FormatRegistry,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainingOutcome> {
    config.validate()?;
    if config.labels != formats.len() {
        return Err(Error::Config(format!(
            "config has {} labels, registry has {}",
            config.labels,
            formats.len()
        )));
    }
    if vocab.pad_id() != config.pad_id {
        return Err(Error::Config(
            "vocabulary and config disagree on pad_id".into(),
        ));
    }
    if corpus.is_empty() {
        return Err(Error::Validation("training corpus is empty".into()));
    }
    let samples = encode_corpus(corpus, config, vocab, formats)?;
    if samples.is_empty() {
        return Err(Error::Validation(
            "training corpus has no labelled spans".into(),
        ));
    }
    let mut params = EncoderParams::init(config, vocab.len(), config.seed);
    if let Some(path) = &config.vectors {
        import_vectors(path, vocab, &mut params)?;
    }
    let mut adam_m = params.zeros_like();
    let mut adam_v = params.zeros_like();
    let mut step = 0i32;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let weight = 1.0 / batch.len() as f64;
            let partials: Vec<Result<(EncoderParams, f64, usize)>> = batch
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut grads = params.zeros_like();
                    let mut loss = 0.0;
                    let mut hits = 0;
                    for &i in chunk {
                        let (l, ok) =
                            sample_gradient(&params, &samples[i], config, weight, &mut grads)?;
                        loss += l;
                        hits += ok as usize;
                    }
                    Ok((grads, loss, hits))
                })
                .collect();
            let mut total: Option<EncoderParams> = None;
            let mut batch_loss = 0.0;
            for part in partials {
                let (g, l, hits) = part?;
                batch_loss += l;
                correct += hits;
                match &mut total {
                    None => total = Some(g),
                    Some(t) => t.add_scaled(&g, 1.0),
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                    loss: batch_loss * weight,
                });
            }
            loss_sum += batch_loss;
            step += 1;
            adam_step(
                &mut params,
                &mut adam_m,
                &mut adam_v,
                &total.expect("non-empty batch"),
                config.learning_rate,
                step,
            );
        }
        let entry = EpochLog {
            epoch,
            loss: loss_sum / samples.len() as f64,
            accuracy: correct as f64 / samples.len() as f64,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainingOutcome { params, log })
}

fn adam_step(
    params: &mut EncoderParams,
    m: &mut EncoderParams,
    v: &mut EncoderParams,
    grads: &EncoderParams,
    lr: f64,
    step: i32,
) {
    let c1 = 1.0 - BETA1.powi(step);
    let c2 = 1.0 - BETA2.powi(step);
    let g_all = grads.tensors();
    for (((theta, mt), vt), (_, _, g)) in params
        .tensors_mut()
        .into_iter()
        .zip(m.tensors_mut())
        .zip(v.tensors_mut())
        .zip(g_all.iter())
    {
        for i in 0..theta.len() {
            mt[i] = BETA1 * mt[i] + (1.0 - BETA1) * g[i];
            vt[i] = BETA2 * vt[i] + (1.0 - BETA2) * g[i] * g[i];
            theta[i] -= lr * (mt[i] / c1) / ((vt[i] / c2).sqrt() + ADAM_EPS);
        }
    }
}

impl Classifier {
    /// Builds the vocabulary from `corpus`, resolves the label count (and,
    /// in sentence mode, the window width to the longest sentence) and
    /// trains.
    pub fn fit(
        corpus: &[LabeledSentence],
        config: &ClassifierConfig,
        taxonomy: &Taxonomy,
        formats: &FormatRegistry,
        on_epoch: impl FnMut(&EpochLog),
    ) -> Result<(Self, Vec<EpochLog>)> {
        let mut config = config.clone();
        if config.labels == 0 {
            config.labels = taxonomy.len();
        } else if config.labels != taxonomy.len() {
            return Err(Error::Config(format!(
                "config has {} labels, registry has {}",
                config.labels,
                taxonomy.len()
            )));
        }
        if config.window_mode == WindowMode::Sentence {
            config.window = corpus
                .iter()
                .map(|s| s.text.chars().count())
                .max()
                .unwrap_or(1)
                .max(1);
        }
        let vocab = Vocabulary::from_corpus(corpus, config.pad_id)?;
        let outcome = train_with(corpus, &config, &vocab, formats, on_epoch)?;
        Ok((
            Self {
                config,
                vocab,
                label_names: taxonomy.names(),
                params: outcome.params,
            },
            outcome.log,
        ))
    }
}
