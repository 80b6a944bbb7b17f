//! Labeled sentences, context windows, synthetic corpora and oversampling.
//!
//! All offsets count Unicode scalar values, not bytes.
//!
//! # Corpus line format
//!
//! UTF-8 JSON Lines, one sentence per line:
//!
//! ```text
//! {"text":"今天是2019-10-01","spans":[[3,13,"B_Date_YMD"]]}
//! ```
//!
//! `spans` holds `[start, end, label]` triples (end exclusive) or bare
//! `[start, end]` pairs for unlabeled data. Two optional integer fields carry
//! window augmentations: `pad_prefix` (window positions forced to padding)
//! and `window_shift` (how far the window moves right of centre). Blank
//! lines are skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::extractor::{extract_nsw, is_nsw_surface};
use crate::labels::{LabelId, Taxonomy};
use crate::legality::FormatRegistry;

pub use crate::labels::PatternLabel;

pub const DEFAULT_WINDOW: usize = 30;
pub const DEFAULT_TEMPLATES: &str = include_str!("../assets/templates.toml");
pub const DEFAULT_DISTRIBUTION: &str = include_str!("../assets/distribution.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NswSpan {
    pub start: usize,
    pub end: usize,
    pub label: Option<LabelId>,
}

impl NswSpan {
    pub fn new(start: usize, end: usize, label: LabelId) -> Self {
        Self {
            start,
            end,
            label: Some(label),
        }
    }

    pub fn unlabeled(start: usize, end: usize) -> Self {
        Self {
            start,
            end,
            label: None,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledSentence {
    pub text: String,
    pub spans: Vec<NswSpan>,
    /// Leading window positions replaced by padding (augmentation).
    pub pad_prefix: usize,
    /// Offset of the window towards the right of the NSW (augmentation).
    pub window_shift: i32,
}

impl LabeledSentence {
    pub fn new(text: impl Into<String>, spans: Vec<NswSpan>) -> Self {
        Self {
            text: text.into(),
            spans,
            ..Default::default()
        }
    }

    pub fn chars(&self) -> Vec<char> {
        self.text.chars().collect()
    }

    pub fn surface(&self, span: &NswSpan) -> String {
        self.text
            .chars()
            .skip(span.start)
            .take(span.len())
            .collect()
    }

    /// Context window of `width` positions around `span`.
    pub fn window(&self, span: &NswSpan, width: usize) -> ContextWindow {
        let chars = self.chars();
        let mut w = extract_window_shifted(&chars, span, width, self.window_shift);
        for (c, &in_nsw) in w.chars.iter_mut().zip(&w.nsw_mask).take(self.pad_prefix) {
            if !in_nsw {
                *c = None;
            }
        }
        w
    }

    /// Checks bounds, ordering and overlap of spans.
    pub fn validate(&self) -> Result<()> {
        let len = self.text.chars().count();
        let mut prev_end = 0;
        for (i, s) in self.spans.iter().enumerate() {
            if s.start >= s.end || s.end > len {
                return Err(Error::Validation(format!(
                    "span {i} [{}, {}) out of bounds for text of length {len}",
                    s.start, s.end
                )));
            }
            if i > 0 && s.start < prev_end {
                return Err(Error::Validation(format!(
                    "span {i} overlaps the previous span"
                )));
            }
            prev_end = s.end;
        }
        Ok(())
    }
}

/// Fixed-width view of a sentence around one NSW. `None` is the padding code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextWindow {
    pub chars: Vec<Option<char>>,
    pub nsw_mask: Vec<bool>,
}

impl ContextWindow {
    pub fn width(&self) -> usize {
        self.chars.len()
    }

    pub fn render(&self, pad: char) -> String {
        self.chars.iter().map(|c| c.unwrap_or(pad)).collect()
    }
}

/// Centres the NSW in a window of `width` characters. Left context gets
/// `floor((width - len) / 2)` positions, so ties put the extra one on the
/// right. An NSW longer than the window keeps only its first `width`
/// characters.
pub fn extract_window(text: &[char], span: &NswSpan, width: usize) -> ContextWindow {
    extract_window_shifted(text, span, width, 0)
}

fn extract_window_shifted(
    text: &[char],
    span: &NswSpan,
    width: usize,
    shift: i32,
) -> ContextWindow {
    let len = span.len();
    if len >= width {
        return ContextWindow {
            chars: text[span.start..span.start + width]
                .iter()
                .copied()
                .map(Some)
                .collect(),
            nsw_mask: vec![true; width],
        };
    }
    let slack = (width - len) as i64;
    let left = (slack / 2 - shift as i64).clamp(0, slack);
    let origin = span.start as i64 - left;
    let mut chars = Vec::with_capacity(width);
    let mut nsw_mask = Vec::with_capacity(width);
    for i in 0..width as i64 {
        let pos = origin + i;
        let c = (pos >= 0 && (pos as usize) < text.len()).then(|| text[pos as usize]);
        chars.push(c);
        nsw_mask.push(pos >= span.start as i64 && pos < span.end as i64);
    }
    ContextWindow { chars, nsw_mask }
}

// ---------------------------------------------------------------------------
// Line format

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SpanRecord {
    Labeled(usize, usize, String),
    Bare(usize, usize),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SentenceRecord {
    text: String,
    spans: Vec<SpanRecord>,
    #[serde(default, skip_serializing_if = "is_zero_usize")]
    pad_prefix: usize,
    #[serde(default, skip_serializing_if = "is_zero_i32")]
    window_shift: i32,
}

fn is_zero_usize(v: &usize) -> bool {
    *v == 0
}

fn is_zero_i32(v: &i32) -> bool {
    *v == 0
}

pub fn parse_corpus_line(line: &str, taxonomy: &Taxonomy) -> Result<LabeledSentence> {
    let record: SentenceRecord =
        serde_json::from_str(line).map_err(|e| Error::Validation(e.to_string()))?;
    let spans = record
        .spans
        .into_iter()
        .map(|s| match s {
            SpanRecord::Labeled(a, b, name) => Ok(NswSpan::new(a, b, taxonomy.id(&name)?)),
            SpanRecord::Bare(a, b) => Ok(NswSpan::unlabeled(a, b)),
        })
        .collect::<Result<Vec<_>>>()?;
    let sentence = LabeledSentence {
        text: record.text,
        spans,
        pad_prefix: record.pad_prefix,
        window_shift: record.window_shift,
    };
    sentence.validate()?;
    for s in &sentence.spans {
        let surface = sentence.surface(s);
        if !is_nsw_surface(&surface) {
            return Err(Error::Validation(format!(
                "span [{}, {}) `{surface}` is not a digit/symbol NSW",
                s.start, s.end
            )));
        }
    }
    Ok(sentence)
}

pub fn format_corpus_line(sentence: &LabeledSentence, taxonomy: &Taxonomy) -> String {
    let record = SentenceRecord {
        text: sentence.text.clone(),
        spans: sentence
            .spans
            .iter()
            .map(|s| match s.label {
                Some(l) => SpanRecord::Labeled(s.start, s.end, taxonomy.name(l).to_string()),
                None => SpanRecord::Bare(s.start, s.end),
            })
            .collect(),
        pad_prefix: sentence.pad_prefix,
        window_shift: sentence.window_shift,
    };
    serde_json::to_string(&record).expect("corpus record serializes")
}

pub fn read_corpus(reader: impl BufRead, taxonomy: &Taxonomy) -> Result<Vec<LabeledSentence>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let sentence = parse_corpus_line(&line, taxonomy).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(sentence);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Vec<LabeledSentence>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file), taxonomy)
}

pub fn write_corpus(
    mut w: impl Write,
    corpus: &[LabeledSentence],
    taxonomy: &Taxonomy,
) -> std::io::Result<()> {
    for s in corpus {
        writeln!(w, "{}", format_corpus_line(s, taxonomy))?;
    }
    Ok(())
}

pub fn save_corpus(
    path: impl AsRef<Path>,
    corpus: &[LabeledSentence],
    taxonomy: &Taxonomy,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_corpus(&mut w, corpus, taxonomy)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Distribution

/// Target label proportions for synthetic generation.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusDistribution {
    proportions: Vec<f64>,
}

#[derive(Deserialize)]
struct DistributionFile {
    proportions: BTreeMap<String, f64>,
}

impl CorpusDistribution {
    /// `proportions[l]` is the share of label `l`; must sum to 1 within 1e-9.
    pub fn new(proportions: Vec<f64>) -> Result<Self> {
        if proportions.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("proportions must lie in [0, 1]".into()));
        }
        let sum: f64 = proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "proportions sum to {sum}, expected 1"
            )));
        }
        Ok(Self { proportions })
    }

    pub fn builtin(taxonomy: &Taxonomy) -> Self {
        Self::parse(DEFAULT_DISTRIBUTION, taxonomy).expect("built-in distribution is valid")
    }

    pub fn load(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Self> {
        Self::parse(&read_to_string(path)?, taxonomy)
    }

    /// TOML with a `[proportions]` table keyed by label name; missing labels get 0.
    pub fn parse(src: &str, taxonomy: &Taxonomy) -> Result<Self> {
        let file: DistributionFile =
            toml::from_str(src).map_err(|e| Error::Config(format!("distribution: {e}")))?;
        let mut proportions = vec![0.0; taxonomy.len()];
        for (name, p) in file.proportions {
            proportions[taxonomy.id(&name)?.index()] = p;
        }
        Self::new(proportions)
    }

    pub fn uniform(labels: &[LabelId], taxonomy: &Taxonomy) -> Result<Self> {
        let mut proportions = vec![0.0; taxonomy.len()];
        for l in labels {
            proportions[l.index()] = 1.0 / labels.len() as f64;
        }
        Self::new(proportions)
    }

    pub fn proportions(&self) -> &[f64] {
        &self.proportions
    }

    pub fn get(&self, label: LabelId) -> f64 {
        self.proportions.get(label.index()).copied().unwrap_or(0.0)
    }

    /// Labels ordered by descending proportion (ties by id).
    pub fn ranked(&self) -> Vec<LabelId> {
        let mut ids: Vec<LabelId> = (0..self.proportions.len())
            .map(|i| LabelId(i as u16))
            .collect();
        ids.sort_by(|a, b| self.get(*b).total_cmp(&self.get(*a)).then(a.cmp(b)));
        ids
    }

    /// Labels with nonzero proportion.
    pub fn support(&self) -> Vec<LabelId> {
        self.ranked()
            .into_iter()
            .filter(|l| self.get(*l) > 0.0)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Templates

/// One piece of an NSW surface generator.
#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Literal(String),
    /// Uniform integer in `lo..=hi`, zero-padded to `pad` digits.
    Int {
        lo: u64,
        hi: u64,
        pad: usize,
    },
    /// `n` uniform random digits.
    Digits(usize),
    Choice(Vec<String>),
}

/// Parsed surface generator spec such as `{int:0-23}:{pad2:0-59}`.
///
/// Slots: `{int:a-b}`, `{pad2:a-b}`, `{pad3:a-b}`, `{digits:n}` and
/// `{choice:x|y|z}`; everything else is literal.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSpec {
    source: String,
    segments: Vec<Segment>,
}

impl SurfaceSpec {
    pub fn parse(src: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Config(format!("surface spec `{src}`: {msg}"));
        let mut segments = Vec::new();
        let mut rest = src;
        while !rest.is_empty() {
            let Some(open) = rest.find('{') else {
                segments.push(Segment::Literal(rest.to_string()));
                break;
            };
            if open > 0 {
                segments.push(Segment::Literal(rest[..open].to_string()));
            }
            let close = rest[open..].find('}').ok_or_else(|| bad("unclosed `{`"))? + open;
            let body = &rest[open + 1..close];
            let (kind, arg) = body
                .split_once(':')
                .ok_or_else(|| bad("slot needs `kind:args`"))?;
            let range = |arg: &str| -> Result<(u64, u64)> {
                let (a, b) = arg.split_once('-').ok_or_else(|| bad("expected a-b"))?;
                let lo = a.trim().parse().map_err(|_| bad("bad range start"))?;
                let hi = b.trim().parse().map_err(|_| bad("bad range end"))?;
                if lo > hi {
                    return Err(bad("empty range"));
                }
                Ok((lo, hi))
            };
            segments.push(match kind {
                "int" => {
                    let (lo, hi) = range(arg)?;
                    Segment::Int { lo, hi, pad: 0 }
                }
                "pad2" | "pad3" => {
                    let (lo, hi) = range(arg)?;
                    Segment::Int {
                        lo,
                        hi,
                        pad: if kind == "pad2" { 2 } else { 3 },
                    }
                }
                "digits" => Segment::Digits(arg.parse().map_err(|_| bad("bad digit count"))?),
                "choice" => Segment::Choice(arg.split('|').map(str::to_string).collect()),
                other => return Err(bad(&format!("unknown slot kind `{other}`"))),
            });
            rest = &rest[close + 1..];
        }
        Ok(Self {
            source: src.to_string(),
            segments,
        })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Int { lo, hi, pad } => {
                    let v = rng.gen_range(*lo..=*hi);
                    let _ = write!(out, "{v:0pad$}", pad = *pad);
                }
                Segment::Digits(n) => {
                    for _ in 0..*n {
                        out.push(char::from(b'0' + rng.gen_range(0..10u8)));
                    }
                }
                Segment::Choice(options) => out.push_str(&options[rng.gen_range(0..options.len())]),
            }
        }
        out
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

pub const NSW_SLOT: &str = "{NSW}";

#[derive(Debug, Clone)]
pub struct LabelTemplates {
    pub surfaces: Vec<SurfaceSpec>,
    pub templates: Vec<String>,
}

/// Declarative label → (surface generators, sentence templates) mapping.
#[derive(Debug, Clone, Default)]
pub struct TemplateRegistry {
    by_label: BTreeMap<LabelId, LabelTemplates>,
}

#[derive(Deserialize)]
struct TemplateFile {
    #[serde(default)]
    label: Vec<TemplateEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateEntry {
    name: String,
    surfaces: Vec<String>,
    templates: Vec<String>,
}

impl TemplateRegistry {
    pub fn builtin(taxonomy: &Taxonomy) -> Self {
        Self::parse(DEFAULT_TEMPLATES, taxonomy).expect("built-in templates are valid")
    }

    pub fn load(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Self> {
        Self::parse(&read_to_string(path)?, taxonomy)
    }

    pub fn parse(src: &str, taxonomy: &Taxonomy) -> Result<Self> {
        let file: TemplateFile =
            toml::from_str(src).map_err(|e| Error::Config(format!("templates: {e}")))?;
        let mut reg = Self::default();
        for entry in file.label {
            let id = taxonomy.id(&entry.name)?;
            if entry.surfaces.is_empty() || entry.templates.is_empty() {
                return Err(Error::Config(format!(
                    "label `{}` needs at least one surface and one template",
                    entry.name
                )));
            }
            for t in &entry.templates {
                if t.matches(NSW_SLOT).count() != 1 {
                    return Err(Error::Config(format!(
                        "template `{t}` must contain exactly one {NSW_SLOT}"
                    )));
                }
                if t.chars().any(|c| c.is_ascii_digit()) {
                    return Err(Error::Config(format!("template `{t}` contains digits")));
                }
            }
            let surfaces = entry
                .surfaces
                .iter()
                .map(|s| SurfaceSpec::parse(s))
                .collect::<Result<Vec<_>>>()?;
            let slot = reg.by_label.entry(id).or_insert_with(|| LabelTemplates {
                surfaces: Vec::new(),
                templates: Vec::new(),
            });
            slot.surfaces.extend(surfaces);
            slot.templates.extend(entry.templates);
        }
        Ok(reg)
    }

    pub fn get(&self, label: LabelId) -> Option<&LabelTemplates> {
        self.by_label.get(&label)
    }
}

/// Shape of generated sentences.
#[derive(Debug, Clone)]
pub struct GenerationOptions {
    /// Inclusive range of NSW clauses per sentence.
    pub spans_per_sentence: (usize, usize),
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            spans_per_sentence: (1, 1),
        }
    }
}

/// Everything the generator needs besides the distribution.
pub struct CorpusGenerator<'a> {
    pub taxonomy: &'a Taxonomy,
    pub templates: &'a TemplateRegistry,
    pub formats: &'a FormatRegistry,
}

const MAX_SURFACE_ATTEMPTS: usize = 50;

impl CorpusGenerator<'_> {
    /// Draws `n` sentences. Labels are drawn i.i.d. from `dist`, one per
    /// clause; every surface is checked against its label format and against
    /// re-extraction from the finished sentence.
    pub fn generate(
        &self,
        dist: &CorpusDistribution,
        n: usize,
        seed: u64,
        opts: &GenerationOptions,
    ) -> Result<Vec<LabeledSentence>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        for l in dist.support() {
            if self.templates.get(l).is_none() {
                return Err(Error::Config(format!(
                    "label `{}` has nonzero proportion but no templates",
                    self.taxonomy.name(l)
                )));
            }
        }
        let weights = WeightedIndex::new(dist.proportions())
            .map_err(|e| Error::Config(format!("distribution: {e}")))?;
        let (lo, hi) = opts.spans_per_sentence;
        if lo == 0 || lo > hi {
            return Err(Error::Config(
                "spans_per_sentence must be a nonempty range starting at 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let k = rng.gen_range(lo..=hi);
            let labels: Vec<LabelId> = (0..k)
                .map(|_| LabelId(weights.sample(&mut rng) as u16))
                .collect();
            out.push(self.sentence(&labels, &mut rng)?);
        }
        Ok(out)
    }

    fn sentence(&self, labels: &[LabelId], rng: &mut ChaCha8Rng) -> Result<LabeledSentence> {
        for _ in 0..MAX_SURFACE_ATTEMPTS {
            let mut text = String::new();
            let mut spans = Vec::with_capacity(labels.len());
            let mut offset = 0;
            for (i, &label) in labels.iter().enumerate() {
                if i > 0 {
                    text.push('，');
                    offset += 1;
                }
                let lt = self.templates.get(label).expect("checked above");
                let template = &lt.templates[rng.gen_range(0..lt.templates.len())];
                let spec = &lt.surfaces[rng.gen_range(0..lt.surfaces.len())];
                let surface = spec.sample(rng);
                if !self.formats.verify(&surface, label)? {
                    return Err(Error::Config(format!(
                        "surface spec `{}` produced `{surface}`, which is illegal for {}",
                        spec.source(),
                        self.taxonomy.name(label)
                    )));
                }
                let (before, after) = template.split_once(NSW_SLOT).expect("validated");
                let start = offset + before.chars().count();
                let end = start + surface.chars().count();
                spans.push(NswSpan::new(start, end, label));
                text.push_str(before);
                text.push_str(&surface);
                text.push_str(after);
                offset = text.chars().count();
            }
            text.push('。');
            let extracted: Vec<(usize, usize)> = extract_nsw(&text)
                .iter()
                .map(|s| (s.start, s.end))
                .collect();
            let expected: Vec<(usize, usize)> = spans.iter().map(|s| (s.start, s.end)).collect();
            if extracted == expected {
                return Ok(LabeledSentence::new(text, spans));
            }
        }
        Err(Error::Config(format!(
            "templates for {:?} never produce a cleanly extractable sentence",
            labels
                .iter()
                .map(|l| self.taxonomy.name(*l))
                .collect::<Vec<_>>()
        )))
    }
}

/// Convenience wrapper over [`CorpusGenerator`] with the built-in templates
/// and one NSW per sentence.
pub fn generate_synthetic_corpus(
    taxonomy: &Taxonomy,
    dist: &CorpusDistribution,
    n: usize,
    seed: u64,
) -> Result<Vec<LabeledSentence>> {
    let templates = TemplateRegistry::builtin(taxonomy);
    let formats = FormatRegistry::new(taxonomy)?;
    CorpusGenerator {
        taxonomy,
        templates: &templates,
        formats: &formats,
    }
    .generate(dist, n, seed, &GenerationOptions::default())
}

/// Per-label span counts.
pub fn label_histogram(corpus: &[LabeledSentence], labels: usize) -> Vec<usize> {
    let mut counts = vec![0; labels];
    for s in corpus {
        for span in &s.spans {
            if let Some(l) = span.label {
                counts[l.index()] += 1;
            }
        }
    }
    counts
}

// ---------------------------------------------------------------------------
// Oversampling

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Duplicate,
    PadPrefix,
    DigitJitter,
    WindowShift,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "duplicate" => Self::Duplicate,
            "pad_prefix" => Self::PadPrefix,
            "digit_jitter" => Self::DigitJitter,
            "window_shift" => Self::WindowShift,
            other => {
                return Err(Error::Config(format!(
                    "unknown oversampling strategy `{other}`"
                )))
            }
        })
    }
}

pub fn parse_strategies<S: AsRef<str>>(names: &[S]) -> Result<BTreeSet<Strategy>> {
    names.iter().map(|n| n.as_ref().parse()).collect()
}

#[derive(Debug, Clone)]
pub struct ExpansionOptions {
    /// Labels whose share of spans is below this are expanded.
    pub threshold: f64,
    /// Augmented copies per strategy per qualifying sentence.
    pub factor: usize,
    /// Upper bound for `pad_prefix` and `|window_shift|`.
    pub max_offset: usize,
}

impl Default for ExpansionOptions {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            factor: 3,
            max_offset: 5,
        }
    }
}

/// Appends augmented copies of sentences that carry an under-represented
/// label. Labels are never changed, and jittered surfaces keep their format.
pub fn oversample_expand(
    corpus: &[LabeledSentence],
    strategies: &BTreeSet<Strategy>,
    seed: u64,
    opts: &ExpansionOptions,
    formats: &FormatRegistry,
) -> Vec<LabeledSentence> {
    let mut out = corpus.to_vec();
    if strategies.is_empty() {
        return out;
    }
    let counts = label_histogram(corpus, formats.len());
    let total: usize = counts.iter().sum();
    if total == 0 {
        return out;
    }
    let rare = |l: LabelId| (counts[l.index()] as f64 / total as f64) < opts.threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for sentence in corpus {
        if !sentence.spans.iter().any(|s| s.label.is_some_and(rare)) {
            continue;
        }
        for strategy in strategies {
            for _ in 0..opts.factor {
                let mut copy = sentence.clone();
                match strategy {
                    Strategy::Duplicate => {}
                    Strategy::PadPrefix => {
                        copy.pad_prefix = rng.gen_range(1..=opts.max_offset.max(1))
                    }
                    Strategy::WindowShift => {
                        let m = opts.max_offset.max(1) as i32;
                        let mut shift = 0;
                        while shift == 0 {
                            shift = rng.gen_range(-m..=m);
                        }
                        copy.window_shift = shift;
                    }
                    Strategy::DigitJitter => jitter_digits(&mut copy, formats, &mut rng),
                }
                out.push(copy);
            }
        }
    }
    out
}

const JITTER_ATTEMPTS: usize = 20;

/// Replaces digits of every labeled span, keeping lengths so offsets hold.
/// A span whose jittered forms never pass its format keeps its surface.
fn jitter_digits(sentence: &mut LabeledSentence, formats: &FormatRegistry, rng: &mut impl Rng) {
    let mut chars = sentence.chars();
    for span in &sentence.spans {
        let Some(label) = span.label else { continue };
        for _ in 0..JITTER_ATTEMPTS {
            let candidate: String = chars[span.start..span.end]
                .iter()
                .map(|&c| {
                    if c.is_ascii_digit() && rng.gen_bool(0.5) {
                        char::from(b'0' + rng.gen_range(0..10u8))
                    } else {
                        c
                    }
                })
                .collect();
            if formats.verify(&candidate, label).unwrap_or(false) {
                let mut trial = chars.clone();
                trial.splice(span.start..span.end, candidate.chars());
                let text: String = trial.iter().collect();
                let still_one_span = extract_nsw(&text)
                    .iter()
                    .any(|s| s.start == span.start && s.end == span.end);
                if still_one_span {
                    chars = trial;
                    break;
                }
            }
        }
    }
    sentence.text = chars.into_iter().collect();
}
