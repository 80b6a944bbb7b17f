//! Pattern-level metrics, sentence accuracy and the ablation runner.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    label_histogram, oversample_expand, parse_strategies, ExpansionOptions, LabeledSentence,
};
use crate::error::{read_to_string, Error, Result};
use crate::labels::{LabelId, Taxonomy};
use crate::legality::FormatRegistry;
use crate::neural::{Classifier, ClassifierConfig, WindowMode};
use crate::pattern_reader::PatternReader;
use crate::pipeline::{render_reference, HybridSystem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold occurrences.
    pub support: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternMetrics {
    pub per_label: Vec<LabelMetrics>,
    pub accuracy: f64,
    /// `confusion[gold][predicted]`; spans without a prediction are not in it.
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
}

fn safe_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Harmonic mean, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    safe_div(2.0 * precision * recall, precision + recall)
}

/// Per-label precision, recall and F1 plus exact-match accuracy. A `None`
/// prediction counts against the gold label's recall only.
pub fn pattern_metrics(
    pairs: &[(LabelId, Option<LabelId>)],
    labels: usize,
) -> Result<PatternMetrics> {
    if pairs.is_empty() {
        return Err(Error::Validation("no predictions to score".into()));
    }
    let mut confusion = vec![vec![0usize; labels]; labels];
    let mut support = vec![0usize; labels];
    let mut hits = 0;
    for &(gold, pred) in pairs {
        if gold.index() >= labels {
            return Err(Error::UnknownLabel(gold.to_string()));
        }
        support[gold.index()] += 1;
        if let Some(p) = pred {
            if p.index() >= labels {
                return Err(Error::UnknownLabel(p.to_string()));
            }
            confusion[gold.index()][p.index()] += 1;
            hits += (p == gold) as usize;
        }
    }
    let per_label = (0..labels)
        .map(|l| {
            let tp = confusion[l][l] as f64;
            let predicted: usize = confusion.iter().map(|row| row[l]).sum();
            let precision = safe_div(tp, predicted as f64);
            let recall = safe_div(tp, support[l] as f64);
            LabelMetrics {
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: support[l],
                predicted,
            }
        })
        .collect();
    Ok(PatternMetrics {
        per_label,
        accuracy: hits as f64 / pairs.len() as f64,
        confusion,
        total: pairs.len(),
    })
}

impl PatternMetrics {
    /// Mean recall over `labels` that have gold support.
    pub fn macro_recall(&self, labels: &[LabelId]) -> f64 {
        let present: Vec<f64> = labels
            .iter()
            .map(|l| self.per_label[l.index()])
            .filter(|m| m.support > 0)
            .map(|m| m.recall)
            .collect();
        safe_div(present.iter().sum(), present.len() as f64)
    }

    /// Aligned text table of the labels that occur.
    pub fn table(&self, taxonomy: &Taxonomy) -> String {
        let width = taxonomy
            .names()
            .iter()
            .map(|n| n.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut s = format!(
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}\n",
            "label", "precision", "recall", "f1", "support"
        );
        for (i, m) in self.per_label.iter().enumerate() {
            if m.support == 0 && m.predicted == 0 {
                continue;
            }
            let _ = writeln!(
                s,
                "{:<width$}  {:>9.3}  {:>9.3}  {:>9.3}  {:>7}",
                taxonomy.name(LabelId(i as u16)),
                m.precision,
                m.recall,
                m.f1,
                m.support
            );
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:>9.3}  ({} spans)",
            "accuracy", self.accuracy, self.total
        );
        s
    }
}

/// Fraction of pairs whose strings are identical, character for character.
pub fn sentence_accuracy<A: AsRef<str>, B: AsRef<str>>(pairs: &[(A, B)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Validation("no sentence pairs to score".into()));
    }
    let same = pairs
        .iter()
        .filter(|(a, b)| a.as_ref() == b.as_ref())
        .count();
    Ok(same as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub train: Vec<LabeledSentence>,
    pub dev: Vec<LabeledSentence>,
    pub test: Vec<LabeledSentence>,
}

/// Seeded shuffle, then 80% / 10% / 10% (floors; the remainder goes to
/// the test part).
pub fn split_corpus(corpus: &[LabeledSentence], seed: u64) -> Split {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = corpus.len();
    let n_train = n * 8 / 10;
    let n_dev = n / 10;
    let take = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect::<Vec<_>>();
    Split {
        train: take(&order[..n_train]),
        dev: take(&order[n_train..n_train + n_dev]),
        test: take(&order[n_train + n_dev..]),
    }
}

/// Classifier predictions for every labelled span of `corpus`.
pub fn classifier_predictions(
    clf: &Classifier,
    corpus: &[LabeledSentence],
    formats: &FormatRegistry,
) -> Vec<(LabelId, Option<LabelId>)> {
    let mut out = Vec::new();
    for s in corpus {
        let chars = s.chars();
        for span in &s.spans {
            let Some(gold) = span.label else { continue };
            let legal = formats.legal_labels(&s.surface(span));
            let pred = clf
                .classify_span(&chars, span, &legal)
                .ok()
                .map(|c| c.label);
            out.push((gold, pred));
        }
    }
    out
}

/// The `k` least frequent labels among those that occur in `corpus`.
pub fn rare_labels(corpus: &[LabeledSentence], labels: usize, k: usize) -> Vec<LabelId> {
    let counts = label_histogram(corpus, labels);
    let mut present: Vec<(usize, usize)> = counts
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, c)| c > 0)
        .collect();
    present.sort_by_key(|&(i, c)| (c, i));
    present
        .into_iter()
        .take(k)
        .map(|(i, _)| LabelId(i as u16))
        .collect()
}

/// Hybrid and rules-only results on a golden set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoldenReport {
    pub sentences: usize,
    pub hybrid_accuracy: f64,
    pub rules_accuracy: f64,
    /// Span labels chosen by the hybrid system against the gold labels.
    pub hybrid_patterns: PatternMetrics,
    pub rules_patterns: PatternMetrics,
}

/// Golden sets are labelled corpora; the reference of each sentence is its
/// rendering with the gold labels.
pub fn evaluate_golden(sys: &HybridSystem, golden: &[LabeledSentence]) -> Result<GoldenReport> {
    let references: Vec<String> = golden
        .iter()
        .map(|s| render_reference(s, &sys.reader))
        .collect::<Result<_>>()?;
    let mut hybrid = Vec::with_capacity(golden.len());
    let mut rules = Vec::with_capacity(golden.len());
    let mut hybrid_pairs = Vec::new();
    let mut rule_pairs = Vec::new();
    for (s, reference) in golden.iter().zip(&references) {
        let (h_out, h_traces) = sys.normalize(&s.text);
        let (r_out, r_traces) = sys.normalize_rules_only(&s.text);
        hybrid.push((h_out, reference.as_str()));
        rules.push((r_out, reference.as_str()));
        for (pairs, traces) in [(&mut hybrid_pairs, &h_traces), (&mut rule_pairs, &r_traces)] {
            for span in &s.spans {
                let Some(gold) = span.label else { continue };
                let pred = traces
                    .iter()
                    .find(|t| t.span.start == span.start && t.span.end == span.end)
                    .and_then(|t| t.label);
                pairs.push((gold, pred));
            }
        }
    }
    let labels = sys.taxonomy.len();
    Ok(GoldenReport {
        sentences: golden.len(),
        hybrid_accuracy: sentence_accuracy(&hybrid)?,
        rules_accuracy: sentence_accuracy(&rules)?,
        hybrid_patterns: pattern_metrics(&hybrid_pairs, labels)?,
        rules_patterns: pattern_metrics(&rule_pairs, labels)?,
    })
}

// ---------------------------------------------------------------------------
// Ablation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Focal,
    CrossEntropy,
}

/// One row of an ablation grid: overrides on top of the base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSetup {
    pub name: String,
    #[serde(default)]
    pub pad_id: Option<u32>,
    #[serde(default)]
    pub window_mode: Option<WindowMode>,
    #[serde(default)]
    pub loss: Option<LossKind>,
    #[serde(default)]
    pub use_mask: Option<bool>,
    /// Oversampling strategies applied to the training split.
    #[serde(default)]
    pub expand: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationGrid {
    #[serde(default)]
    pub base: ClassifierConfig,
    /// Number of rarest labels whose macro recall is reported.
    #[serde(default = "default_rare")]
    pub rare_labels: usize,
    #[serde(rename = "setup")]
    pub setups: Vec<AblationSetup>,
}

fn default_rare() -> usize {
    5
}

pub const DEFAULT_ABLATION_GRID: &str = include_str!("../assets/ablation.toml");

impl AblationGrid {
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_ABLATION_GRID).expect("built-in grid is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_to_string(path)?)
    }

    pub fn parse(src: &str) -> Result<Self> {
        let grid: Self = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        grid.base.validate()?;
        if grid.setups.is_empty() {
            return Err(Error::Config(
                "ablation grid has no [[setup]] entries".into(),
            ));
        }
        for s in &grid.setups {
            parse_strategies(&s.expand)?;
        }
        Ok(grid)
    }
}

impl AblationSetup {
    pub fn config(&self, base: &ClassifierConfig, seed: u64) -> ClassifierConfig {
        let mut c = base.clone();
        c.seed = seed;
        if let Some(p) = self.pad_id {
            c.pad_id = p;
        }
        if let Some(m) = self.window_mode {
            c.window_mode = m;
        }
        if let Some(LossKind::CrossEntropy) = self.loss {
            c = c.with_cross_entropy();
        }
        if let Some(m) = self.use_mask {
            c.use_mask = m;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum AblationOutcome {
    Ok {
        accuracy: f64,
        rare_recall: f64,
        train_sentences: usize,
        final_loss: f64,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    #[serde(flatten)]
    pub outcome: AblationOutcome,
}

/// Trains and scores one model per setup on the same seeded split. A setup
/// that fails is reported and the run continues.
pub fn run_ablation(
    grid: &AblationGrid,
    corpus: &[LabeledSentence],
    taxonomy: &Taxonomy,
    seed: u64,
    mut progress: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let formats = FormatRegistry::new(taxonomy)?;
    let split = split_corpus(corpus, seed);
    let rare = rare_labels(&split.train, taxonomy.len(), grid.rare_labels);
    let mut rows = Vec::with_capacity(grid.setups.len());
    for setup in &grid.setups {
        let outcome = match ablation_row(setup, grid, &split, taxonomy, &formats, &rare, seed) {
            Ok(o) => o,
            Err(e) => AblationOutcome::Failed {
                error: e.to_string(),
            },
        };
        let row = AblationRow {
            name: setup.name.clone(),
            outcome,
        };
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

fn ablation_row(
    setup: &AblationSetup,
    grid: &AblationGrid,
    split: &Split,
    taxonomy: &Taxonomy,
    formats: &FormatRegistry,
    rare: &[LabelId],
    seed: u64,
) -> Result<AblationOutcome> {
    let config = setup.config(&grid.base, seed);
    config.validate()?;
    let strategies: BTreeSet<_> = parse_strategies(&setup.expand)?;
    let train = oversample_expand(
        &split.train,
        &strategies,
        seed,
        &ExpansionOptions::default(),
        formats,
    );
    let (clf, log) = Classifier::fit(&train, &config, taxonomy, formats, |_| {})?;
    if split.test.is_empty() {
        return Err(Error::Validation("test split is empty".into()));
    }
    let metrics = pattern_metrics(
        &classifier_predictions(&clf, &split.test, formats),
        taxonomy.len(),
    )?;
    Ok(AblationOutcome::Ok {
        accuracy: metrics.accuracy,
        rare_recall: metrics.macro_recall(rare),
        train_sentences: train.len(),
        final_loss: log.last().map_or(f64::NAN, |e| e.loss),
    })
}

/// Aligned text table of ablation rows.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.name.chars().count())
        .max()
        .unwrap_or(5)
        .max(5);
    let mut s = format!(
        "{:<width$}  {:>8}  {:>11}  {:>7}\n",
        "setup", "accuracy", "rare recall", "train"
    );
    for r in rows {
        let pad = width - r.name.chars().count() + r.name.len();
        match &r.outcome {
            AblationOutcome::Ok {
                accuracy,
                rare_recall,
                train_sentences,
                ..
            } => {
                let _ = writeln!(
                    s,
                    "{:<pad$}  {:>8.4}  {:>11.4}  {:>7}",
                    r.name, accuracy, rare_recall, train_sentences
                );
            }
            AblationOutcome::Failed { error } => {
                let _ = writeln!(s, "{:<pad$}  failed: {error}", r.name);
            }
        }
    }
    s
}

/// Reference strings for a labelled corpus.
pub fn golden_references(
    corpus: &[LabeledSentence],
    reader: &PatternReader,
) -> Result<Vec<String>> {
    corpus.iter().map(|s| render_reference(s, reader)).collect()
}
