//! The hybrid normalizer: extraction, priority routing, classification with
//! verification and rule fallback, rendering and reinsertion.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{LabeledSentence, NswSpan};
use crate::error::{Error, Result};
use crate::extractor::{extract_nsw, PriorityList};
use crate::labels::{LabelId, Taxonomy};
use crate::legality::FormatRegistry;
use crate::neural::Classifier;
use crate::pattern_reader::PatternReader;
use crate::rule_engine::{apply_rules, normalize_rule_based, RuleSet};

/// Which path produced (or failed to produce) a span's SFW.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Listed on the priority list and rendered by a rule.
    PriorityRule,
    /// Classified, verified and rendered.
    Neural,
    /// The neural result was rejected and a rule took over.
    FallbackRule,
    /// Left verbatim.
    Unmatched,
    /// Rendered by the standalone rule-based normalizer.
    Rule,
}

impl Route {
    pub fn as_str(self) -> &'static str {
        match self {
            Route::PriorityRule => "priority_rule",
            Route::Neural => "neural",
            Route::FallbackRule => "fallback_rule",
            Route::Unmatched => "unmatched",
            Route::Rule => "rule",
        }
    }
}

/// Why the neural result was not used.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FallbackReason {
    /// The predicted label does not accept the surface.
    VerificationFailed {
        predicted: LabelId,
    },
    /// The predicted label accepted the surface but its renderer did not.
    RenderFailed {
        predicted: LabelId,
        message: String,
    },
    ClassifierError {
        message: String,
    },
    /// The system has no classifier loaded.
    NoClassifier,
}

/// What happened to one NSW.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationTrace {
    pub span: NswSpan,
    pub surface: String,
    pub route: Route,
    pub label: Option<LabelId>,
    pub sfw: Option<String>,
    /// Name of the rule that fired, if any.
    pub rule: Option<String>,
    /// Classifier output, whenever the classifier ran.
    pub probabilities: Option<Vec<f64>>,
    pub fallback_reason: Option<FallbackReason>,
}

impl NormalizationTrace {
    pub fn unmatched(span: NswSpan, surface: String) -> Self {
        Self {
            span: NswSpan::unlabeled(span.start, span.end),
            surface,
            route: Route::Unmatched,
            label: None,
            sfw: None,
            rule: None,
            probabilities: None,
            fallback_reason: None,
        }
    }

    /// True when the span was sent to the classifier rather than the
    /// priority rules.
    pub fn took_neural_path(&self) -> bool {
        matches!(self.route, Route::Neural | Route::FallbackRule) || self.fallback_reason.is_some()
    }
}

/// Replaces every span that has an SFW, right to left so earlier offsets
/// stay valid.
pub fn splice(chars: &[char], traces: &[NormalizationTrace]) -> String {
    let mut out: Vec<char> = chars.to_vec();
    let mut ordered: Vec<&NormalizationTrace> = traces.iter().collect();
    ordered.sort_by_key(|t| std::cmp::Reverse(t.span.start));
    for t in ordered {
        if let Some(sfw) = &t.sfw {
            out.splice(t.span.start..t.span.end, sfw.chars());
        }
    }
    out.into_iter().collect()
}

/// Inverse of [`splice`]: puts the original surfaces back into `output`.
pub fn unsplice(output: &str, traces: &[NormalizationTrace]) -> String {
    let out: Vec<char> = output.chars().collect();
    let mut ordered: Vec<&NormalizationTrace> = traces.iter().collect();
    ordered.sort_by_key(|t| t.span.start);
    let mut result = String::with_capacity(output.len());
    let mut cursor = 0usize; // position in `out`
    let mut shift = 0isize; // output offset minus input offset
    for t in ordered {
        let Some(sfw) = &t.sfw else { continue };
        let start = (t.span.start as isize + shift) as usize;
        result.extend(&out[cursor..start]);
        result.push_str(&t.surface);
        let len = sfw.chars().count();
        cursor = start + len;
        shift += len as isize - t.span.len() as isize;
    }
    result.extend(&out[cursor..]);
    result
}

/// Splits after sentence-final punctuation (`。！？；!?;` and newlines).
/// The ASCII full stop is not a boundary since it occurs inside numbers.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if matches!(c, '。' | '！' | '？' | '；' | '!' | '?' | ';' | '\n') {
            let end = i + c.len_utf8();
            out.push(&text[start..end]);
            start = end;
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

/// All components of the hybrid normalizer, sharing one label registry.
pub struct HybridSystem {
    pub taxonomy: Taxonomy,
    pub rules: RuleSet,
    pub priority: PriorityList,
    pub classifier: Option<Classifier>,
    pub formats: FormatRegistry,
    pub reader: PatternReader,
}

impl HybridSystem {
    pub fn new(
        taxonomy: Taxonomy,
        rules: RuleSet,
        priority: PriorityList,
        classifier: Option<Classifier>,
    ) -> Result<Self> {
        if let Some(clf) = &classifier {
            if clf.label_names != taxonomy.names() {
                return Err(Error::Config(
                    "the model was trained on a different label registry".into(),
                ));
            }
        }
        Ok(Self {
            formats: FormatRegistry::new(&taxonomy)?,
            reader: PatternReader::new(&taxonomy)?,
            taxonomy,
            rules,
            priority,
            classifier,
        })
    }

    /// Built-in registry, rules and priority list; no classifier.
    pub fn builtin() -> Result<Self> {
        let taxonomy = Taxonomy::builtin();
        let rules = RuleSet::builtin(&taxonomy);
        Self::new(taxonomy, rules, PriorityList::builtin(), None)
    }

    pub fn with_classifier(self, classifier: Classifier) -> Result<Self> {
        Self::new(self.taxonomy, self.rules, self.priority, Some(classifier))
    }

    /// Normalizes one sentence. Every span is classified against the
    /// original text before anything is replaced.
    pub fn normalize(&self, text: &str) -> (String, Vec<NormalizationTrace>) {
        let chars: Vec<char> = text.chars().collect();
        let traces: Vec<NormalizationTrace> = extract_nsw(text)
            .into_iter()
            .map(|span| self.route_span(&chars, span))
            .collect();
        (splice(&chars, &traces), traces)
    }

    /// The rules-only baseline.
    pub fn normalize_rules_only(&self, text: &str) -> (String, Vec<NormalizationTrace>) {
        normalize_rule_based(&self.rules, &self.reader, text)
    }

    /// Splits `text` into sentences and normalizes them independently.
    pub fn normalize_document(
        &self,
        text: &str,
        rules_only: bool,
    ) -> Vec<(String, Vec<NormalizationTrace>)> {
        split_sentences(text)
            .par_iter()
            .map(|s| {
                if rules_only {
                    self.normalize_rules_only(s)
                } else {
                    self.normalize(s)
                }
            })
            .collect()
    }

    fn route_span(&self, chars: &[char], span: NswSpan) -> NormalizationTrace {
        let surface: String = chars[span.start..span.end].iter().collect();
        if self.priority.check(&surface) {
            return self.rule_trace(chars, span, surface, Route::PriorityRule, None, None);
        }
        let Some(clf) = &self.classifier else {
            return self.rule_trace(
                chars,
                span,
                surface,
                Route::FallbackRule,
                None,
                Some(FallbackReason::NoClassifier),
            );
        };
        let legal = self.formats.legal_labels(&surface);
        let result = match clf.classify_span(chars, &span, &legal) {
            Ok(c) => c,
            Err(e) => {
                let reason = FallbackReason::ClassifierError {
                    message: e.to_string(),
                };
                return self.rule_trace(
                    chars,
                    span,
                    surface,
                    Route::FallbackRule,
                    None,
                    Some(reason),
                );
            }
        };
        let predicted = result.label;
        let probabilities = Some(result.probabilities);
        if !legal[predicted.index()] {
            let reason = FallbackReason::VerificationFailed { predicted };
            return self.rule_trace(
                chars,
                span,
                surface,
                Route::FallbackRule,
                probabilities,
                Some(reason),
            );
        }
        match self.reader.render(&surface, predicted) {
            Ok(r) => NormalizationTrace {
                span: NswSpan::new(span.start, span.end, predicted),
                surface,
                route: Route::Neural,
                label: Some(predicted),
                sfw: Some(r.text),
                rule: None,
                probabilities,
                fallback_reason: None,
            },
            Err(e) => {
                let reason = FallbackReason::RenderFailed {
                    predicted,
                    message: e.to_string(),
                };
                self.rule_trace(
                    chars,
                    span,
                    surface,
                    Route::FallbackRule,
                    probabilities,
                    Some(reason),
                )
            }
        }
    }

    fn rule_trace(
        &self,
        chars: &[char],
        span: NswSpan,
        surface: String,
        route: Route,
        probabilities: Option<Vec<f64>>,
        fallback_reason: Option<FallbackReason>,
    ) -> NormalizationTrace {
        match apply_rules(&self.rules, &self.reader, chars, &span) {
            Some((rule, label, sfw)) => NormalizationTrace {
                span: NswSpan::new(span.start, span.end, label),
                surface,
                route,
                label: Some(label),
                sfw: Some(sfw),
                rule: Some(rule),
                probabilities,
                fallback_reason,
            },
            None => NormalizationTrace {
                probabilities,
                fallback_reason,
                ..NormalizationTrace::unmatched(span, surface)
            },
        }
    }

    /// Counts routes over every NSW of `sentences`.
    pub fn routing_stats<S: AsRef<str> + Sync>(&self, sentences: &[S]) -> RoutingStats {
        let traces: Vec<Vec<NormalizationTrace>> = sentences
            .par_iter()
            .map(|s| self.normalize(s.as_ref()).1)
            .collect();
        RoutingStats::from_traces(traces.iter().flatten())
    }
}

/// Route counts over a set of spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RoutingStats {
    pub spans: usize,
    pub priority: usize,
    /// Spans sent to the classifier, including those that fell back.
    pub neural: usize,
    /// Subset of `neural` that ended on the rule path or unmatched.
    pub fallback: usize,
    pub unmatched: usize,
}

impl RoutingStats {
    pub fn from_traces<'a>(traces: impl IntoIterator<Item = &'a NormalizationTrace>) -> Self {
        let mut s = Self::default();
        for t in traces {
            s.spans += 1;
            if t.took_neural_path() {
                s.neural += 1;
                if t.route != Route::Neural {
                    s.fallback += 1;
                }
            } else {
                s.priority += 1;
            }
            if t.route == Route::Unmatched {
                s.unmatched += 1;
            }
        }
        s
    }

    pub fn priority_fraction(&self) -> f64 {
        ratio(self.priority, self.spans)
    }

    pub fn neural_fraction(&self) -> f64 {
        ratio(self.neural, self.spans)
    }

    /// Share of the classifier's spans that fell back; `None` when the
    /// classifier saw no spans.
    pub fn fallback_fraction(&self) -> Option<f64> {
        (self.neural > 0).then(|| ratio(self.fallback, self.neural))
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Line-delimited trace record.
#[derive(Debug, Serialize)]
pub struct TraceRecord<'a> {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
    pub surface: &'a str,
    pub route: Route,
    pub label: Option<&'a str>,
    pub sfw: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback: Option<&'a FallbackReason>,
}

impl<'a> TraceRecord<'a> {
    pub fn new(sentence: usize, trace: &'a NormalizationTrace, taxonomy: &'a Taxonomy) -> Self {
        Self {
            sentence,
            start: trace.span.start,
            end: trace.span.end,
            surface: &trace.surface,
            route: trace.route,
            label: trace.label.map(|l| taxonomy.name(l)),
            sfw: trace.sfw.as_deref(),
            rule: trace.rule.as_deref(),
            probabilities: trace.probabilities.as_deref(),
            fallback: trace.fallback_reason.as_ref(),
        }
    }
}

/// Writes one JSON object per trace.
pub fn write_traces(
    mut w: impl Write,
    sentence: usize,
    traces: &[NormalizationTrace],
    taxonomy: &Taxonomy,
) -> std::io::Result<()> {
    for t in traces {
        let line = serde_json::to_string(&TraceRecord::new(sentence, t, taxonomy))
            .map_err(std::io::Error::other)?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Reference rendering of a labelled sentence: every span rendered with its
/// gold label.
pub fn render_reference(sentence: &LabeledSentence, reader: &PatternReader) -> Result<String> {
    let chars = sentence.chars();
    let mut traces = Vec::with_capacity(sentence.spans.len());
    for span in &sentence.spans {
        let label = span.label.ok_or_else(|| {
            Error::Validation(format!("span [{}, {}) has no label", span.start, span.end))
        })?;
        let surface = sentence.surface(span);
        let sfw = reader.render(&surface, label)?.text;
        traces.push(NormalizationTrace {
            span: *span,
            surface,
            route: Route::Rule,
            label: Some(label),
            sfw: Some(sfw),
            rule: None,
            probabilities: None,
            fallback_reason: None,
        });
    }
    Ok(splice(&chars, &traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{ClassifierConfig, EncoderParams, Vocabulary};
    use proptest::prelude::*;

    fn untrained(system: &HybridSystem, use_mask: bool) -> Classifier {
        let config = ClassifierConfig {
            window: 10,
            heads: 2,
            model_dim: 8,
            ff_dim: 8,
            labels: system.taxonomy.len(),
            use_mask,
            ..Default::default()
        };
        let vocab = Vocabulary::new("比赛开始分是".chars(), 1).unwrap();
        let params = EncoderParams::init(&config, vocab.len(), 1);
        Classifier {
            config,
            vocab,
            label_names: system.taxonomy.names(),
            params,
        }
    }

    #[test]
    fn no_nsw_is_identity() {
        let sys = HybridSystem::builtin().unwrap();
        let (out, traces) = sys.normalize("今天天气很好。");
        assert_eq!(out, "今天天气很好。");
        assert!(traces.is_empty());
    }

    #[test]
    fn priority_numbers_take_the_rule_path() {
        let sys = HybridSystem::builtin().unwrap();
        let sys = {
            let clf = untrained(&sys, true);
            sys.with_classifier(clf).unwrap()
        };
        let (out, traces) = sys.normalize("请拨打911求助");
        assert_eq!(out, "请拨打九幺幺求助");
        assert_eq!(traces[0].route, Route::PriorityRule);
        assert!(traces[0].probabilities.is_none());
        let stats = sys.routing_stats(&["打911", "拨911"]);
        assert_eq!(
            (stats.priority_fraction(), stats.neural_fraction()),
            (1.0, 0.0)
        );
        assert_eq!(stats.fallback_fraction(), None);
    }

    #[test]
    fn masked_classification_always_verifies() {
        let sys = HybridSystem::builtin().unwrap();
        let clf = untrained(&sys, true);
        let sys = sys.with_classifier(clf).unwrap();
        let (_, traces) = sys.normalize("比赛10:30开始，比分是30-10，涨了10%，共200人。");
        assert_eq!(traces.len(), 4);
        for t in &traces {
            assert_eq!(t.route, Route::Neural, "{t:?}");
            assert!(t.probabilities.is_some());
            assert!(sys.formats.verify(&t.surface, t.label.unwrap()).unwrap());
        }
        let stats = RoutingStats::from_traces(&traces);
        assert_eq!(
            (stats.priority_fraction(), stats.neural_fraction()),
            (0.0, 1.0)
        );
        assert_eq!(stats.fallback_fraction(), Some(0.0));
    }

    #[test]
    fn unmasked_model_falls_back_with_evidence() {
        let sys = HybridSystem::builtin().unwrap();
        let clf = untrained(&sys, false);
        let sys = sys.with_classifier(clf).unwrap();
        let texts = [
            "比赛10:30开始",
            "比分是30-10",
            "涨了10%",
            "共200人",
            "2019-10-01",
            "100/人",
        ];
        let mut fallbacks = 0;
        for text in texts {
            for t in sys.normalize(text).1 {
                assert!(t.probabilities.is_some());
                if t.route == Route::FallbackRule {
                    fallbacks += 1;
                    assert!(matches!(
                        t.fallback_reason,
                        Some(FallbackReason::VerificationFailed { .. })
                    ));
                } else {
                    assert_eq!(t.route, Route::Neural);
                }
            }
        }
        // An untrained unmasked model picks among 11 labels; most are illegal.
        assert!(fallbacks > 0);
    }

    #[test]
    fn without_classifier_everything_falls_back() {
        let sys = HybridSystem::builtin().unwrap();
        let (out, traces) = sys.normalize("比分是30-10");
        assert_eq!(out, "比分是三十比十");
        assert_eq!(traces[0].route, Route::FallbackRule);
        assert_eq!(
            traces[0].fallback_reason,
            Some(FallbackReason::NoClassifier)
        );
    }

    #[test]
    fn double_failure_is_unmatched() {
        let sys = HybridSystem::builtin().unwrap();
        let (out, traces) = sys.normalize("序列1,2,3结束");
        assert_eq!(out, "序列1,2,3结束");
        assert_eq!(traces[0].route, Route::Unmatched);
        assert!(traces[0].took_neural_path());
    }

    #[test]
    fn sentence_split() {
        assert_eq!(
            split_sentences("他有2.5元。好！最后"),
            vec!["他有2.5元。", "好！", "最后"]
        );
        assert!(split_sentences("").is_empty());
    }

    #[test]
    fn trace_lines() {
        let sys = HybridSystem::builtin().unwrap();
        let (_, traces) = sys.normalize("打911");
        let mut buf = Vec::new();
        write_traces(&mut buf, 3, &traces, &sys.taxonomy).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["route"], "priority_rule");
        assert_eq!(v["label"], "A_One_Yao_Spell");
        assert_eq!(v["sentence"], 3);
    }

    proptest! {
        #[test]
        fn splice_orders_agree(text in "[今天是比分0-9:%\\-/]{0,30}") {
            let sys = HybridSystem::builtin().unwrap();
            let (out, traces) = sys.normalize(&text);
            // Left-to-right assembly of the same replacements.
            let chars: Vec<char> = text.chars().collect();
            let mut forward = String::new();
            let mut cursor = 0;
            for t in &traces {
                forward.extend(&chars[cursor..t.span.start]);
                match &t.sfw {
                    Some(s) => forward.push_str(s),
                    None => forward.push_str(&t.surface),
                }
                cursor = t.span.end;
            }
            forward.extend(&chars[cursor..]);
            prop_assert_eq!(&out, &forward);
            prop_assert_eq!(unsplice(&out, &traces), text);
        }
    }
}
