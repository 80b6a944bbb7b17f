//! Self-attention pattern classifier.
//!
//! A window of characters around one NSW is embedded (character table plus a
//! learned position table), passed through one post-norm encoder block with
//! multi-head self-attention, mean-pooled over the NSW positions and mapped
//! to label logits. A legality mask zeroes the probabilities of labels whose
//! surface format the NSW cannot have.

mod checkpoint;
mod encoder;
mod gradcheck;
pub mod loss;
mod params;
mod train;

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{extract_window, ContextWindow, LabeledSentence, NswSpan};
use crate::error::{read_to_string, Error, Result};
use crate::labels::LabelId;

pub use checkpoint::{
    load_checkpoint, load_params, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use encoder::{
    attention_weights, backward, embed, forward, multi_head_self_attention, Forward,
    LAYER_NORM_EPS, PAD_SCORE,
};
pub use gradcheck::{gradient_check, relative_error, GradCheckReport, RELATIVE_FLOOR};
pub use loss::{focal_loss, focal_loss_grad, masked_softmax};
pub use params::{EncoderParams, TENSOR_NAMES};
pub use train::{
    batch_loss, encode_corpus, sample_gradient, sample_loss, train, train_with, EncodedSample,
    EpochLog, TrainingBatch, TrainingOutcome,
};

/// Character ids. Unknown characters map to `unk_id`, padding to `pad_id`,
/// and known characters take the ids from 2 upwards in code-point order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, u32>,
    pad_id: u32,
    unk_id: u32,
}

impl Vocabulary {
    /// `pad_id` must be 0 or 1; the other of the two becomes `unk_id`.
    pub fn new(chars: impl IntoIterator<Item = char>, pad_id: u32) -> Result<Self> {
        if pad_id > 1 {
            return Err(Error::Config(format!(
                "pad_id must be 0 or 1, got {pad_id}"
            )));
        }
        let chars: Vec<char> = chars
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i as u32 + 2))
            .collect();
        Ok(Self {
            chars,
            index,
            pad_id,
            unk_id: 1 - pad_id,
        })
    }

    /// Every character occurring in the corpus.
    pub fn from_corpus(corpus: &[LabeledSentence], pad_id: u32) -> Result<Self> {
        Self::new(corpus.iter().flat_map(|s| s.text.chars()), pad_id)
    }

    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn id(&self, c: char) -> u32 {
        self.index.get(&c).copied().unwrap_or(self.unk_id)
    }

    /// `None` for the two reserved ids.
    pub fn char(&self, id: u32) -> Option<char> {
        id.checked_sub(2)
            .and_then(|i| self.chars.get(i as usize).copied())
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn encode(&self, window: &ContextWindow) -> Vec<u32> {
        window
            .chars
            .iter()
            .map(|c| c.map_or(self.pad_id, |c| self.id(c)))
            .collect()
    }
}

/// How a context window is cut out of a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// `window` characters centred on the NSW.
    #[default]
    Fixed,
    /// The whole sentence, left-aligned and padded to `window`. Sentences
    /// longer than `window` fall back to a centred window.
    Sentence,
}

fn default_window() -> usize {
    30
}
fn default_heads() -> usize {
    8
}
fn default_model_dim() -> usize {
    64
}
fn default_ff_dim() -> usize {
    128
}
fn default_alpha() -> f64 {
    0.5
}
fn default_gamma() -> f64 {
    4.0
}
fn default_lr() -> f64 {
    1e-3
}
fn default_epochs() -> usize {
    30
}
fn default_batch() -> usize {
    32
}
fn default_pad() -> u32 {
    1
}
fn default_true() -> bool {
    true
}

/// Hyperparameters. Read from TOML; every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub window_mode: WindowMode,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_model_dim")]
    pub model_dim: usize,
    #[serde(default = "default_ff_dim")]
    pub ff_dim: usize,
    /// Label count; 0 means "take it from the registry".
    #[serde(default)]
    pub labels: usize,
    #[serde(default = "default_alpha")]
    pub focal_alpha: f64,
    #[serde(default = "default_gamma")]
    pub focal_gamma: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_pad")]
    pub pad_id: u32,
    /// Apply the legality mask inside the softmax.
    #[serde(default = "default_true")]
    pub use_mask: bool,
    /// Optional pre-trained character vectors, one character and
    /// `model_dim` reals per line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vectors: Option<PathBuf>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl ClassifierConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_to_string(path)?)
    }

    pub fn parse(src: &str) -> Result<Self> {
        let config: Self = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Cross-entropy: `alpha = 1`, `gamma = 0`.
    pub fn with_cross_entropy(mut self) -> Self {
        self.focal_alpha = 1.0;
        self.focal_gamma = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.window == 0 {
            return fail("window must be positive".into());
        }
        if self.heads == 0 || self.model_dim == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "model_dim ({}) must be a positive multiple of heads ({})",
                self.model_dim, self.heads
            ));
        }
        if self.ff_dim == 0 {
            return fail("ff_dim must be positive".into());
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha <= 1.0) {
            return fail(format!(
                "focal_alpha must lie in (0, 1], got {}",
                self.focal_alpha
            ));
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return fail(format!(
                "focal_gamma must be >= 0, got {}",
                self.focal_gamma
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.pad_id > 1 {
            return fail(format!("pad_id must be 0 or 1, got {}", self.pad_id));
        }
        Ok(())
    }

    /// Window around `span` in `text` under this configuration.
    pub fn window_for(&self, text: &[char], span: &NswSpan) -> ContextWindow {
        match self.window_mode {
            WindowMode::Sentence if text.len() <= self.window => {
                let mut chars: Vec<Option<char>> = text.iter().copied().map(Some).collect();
                chars.resize(self.window, None);
                let nsw_mask = (0..self.window)
                    .map(|i| i >= span.start && i < span.end)
                    .collect();
                ContextWindow { chars, nsw_mask }
            }
            _ => extract_window(text, span, self.window),
        }
    }

    /// Like [`Self::window_for`] but honours the augmentation fields of a
    /// training sentence.
    pub fn sentence_window(&self, sentence: &LabeledSentence, span: &NswSpan) -> ContextWindow {
        match self.window_mode {
            WindowMode::Fixed => sentence.window(span, self.window),
            WindowMode::Sentence => self.window_for(&sentence.chars(), span),
        }
    }
}

/// Reads a vector file into the embedding rows of known characters.
/// Returns how many rows were replaced.
pub fn import_vectors(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    params: &mut EncoderParams,
) -> Result<usize> {
    let path = path.as_ref();
    let src = read_to_string(path)?;
    let d = params.model_dim();
    let mut replaced = 0;
    for (i, line) in src.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap_or_default();
        let mut cs = token.chars();
        let (Some(c), None) = (cs.next(), cs.next()) else {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected a single character, got `{token}`"),
            });
        };
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        if values.len() != d {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {d} values, got {}", values.len()),
            });
        }
        let id = vocab.id(c);
        if id == vocab.unk_id() {
            continue;
        }
        params
            .embedding
            .row_mut(id as usize)
            .assign(&ndarray::ArrayView1::from(&values));
        replaced += 1;
    }
    Ok(replaced)
}

/// Result of classifying one NSW.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label: LabelId,
    pub probabilities: Vec<f64>,
}

/// Trained parameters together with everything needed to use them.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub config: ClassifierConfig,
    pub vocab: Vocabulary,
    pub label_names: Vec<String>,
    pub params: EncoderParams,
}

impl Classifier {
    /// Probabilities over all labels and the argmax. `legal` must have one
    /// flag per label with at least one set; with `use_mask` off in the
    /// config every label is treated as legal.
    pub fn classify(&self, window: &ContextWindow, legal: &[bool]) -> Result<Classification> {
        if legal.len() != self.config.labels {
            return Err(Error::Classifier(format!(
                "legal mask has {} entries, model has {} labels",
                legal.len(),
                self.config.labels
            )));
        }
        if window.width() != self.config.window {
            return Err(Error::Classifier(format!(
                "window has width {}, model expects {}",
                window.width(),
                self.config.window
            )));
        }
        if !legal.iter().any(|&b| b) {
            return Err(Error::Classifier("no legal label for this NSW".into()));
        }
        let all = vec![true; legal.len()];
        let mask = if self.config.use_mask { legal } else { &all };
        let ids = self.vocab.encode(window);
        let fwd = encoder::forward(
            &self.params,
            &ids,
            &window_padding(window),
            &window.nsw_mask,
        );
        let probabilities = masked_softmax(&fwd.logits, mask)?;
        let label = argmax(&probabilities);
        Ok(Classification {
            label: LabelId(label as u16),
            probabilities,
        })
    }

    /// Classifies `span` of `text` with the configured window.
    pub fn classify_span(
        &self,
        text: &[char],
        span: &NswSpan,
        legal: &[bool],
    ) -> Result<Classification> {
        self.classify(&self.config.window_for(text, span), legal)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_checkpoint(path)
    }
}

pub(crate) fn window_padding(window: &ContextWindow) -> Vec<bool> {
    window.chars.iter().map(Option::is_none).collect()
}

/// First index of the maximum.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
