//! Prioritized context-pattern rules with longest-context-first matching.
//!
//! Every rule declares how many context characters it inspects on each side.
//! A [`RuleSet`] is ordered by that length (longest first), then by priority
//! (highest first), then by name, and matching returns the first rule in this
//! order whose patterns all match.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::path::Path;

use regex::Regex;
use serde::Deserialize;

use crate::corpus::NswSpan;
use crate::error::{read_to_string, Error, Result};
use crate::extractor::extract_nsw;
use crate::labels::{LabelId, Taxonomy};
use crate::legality::full_match_regex;
use crate::pattern_reader::PatternReader;
use crate::pipeline::{splice, NormalizationTrace, Route};

pub const DEFAULT_RULES: &str = include_str!("../assets/rules.toml");

#[derive(Debug, Clone)]
pub struct Rule {
    pub name: String,
    pub group: String,
    pub priority: i64,
    pub context_len: usize,
    pub label: LabelId,
    pre: Regex,
    nsw: Regex,
    post: Regex,
}

impl Rule {
    pub fn pre_pattern(&self) -> &str {
        self.pre.as_str()
    }

    pub fn post_pattern(&self) -> &str {
        self.post.as_str()
    }

    /// Tests the rule at `span`. Context is clipped at the sentence edges.
    pub fn matches(&self, text: &[char], span: &NswSpan) -> bool {
        let surface: String = text[span.start..span.end].iter().collect();
        if !self.nsw.is_match(&surface) {
            return false;
        }
        let pre: String = text[span.start.saturating_sub(self.context_len)..span.start]
            .iter()
            .collect();
        let post: String = text[span.end..(span.end + self.context_len).min(text.len())]
            .iter()
            .collect();
        self.pre.is_match(&pre) && self.post.is_match(&post)
    }

    fn order(&self, other: &Self) -> Ordering {
        other
            .context_len
            .cmp(&self.context_len)
            .then(other.priority.cmp(&self.priority))
            .then_with(|| self.name.cmp(&other.name))
    }
}

/// Rule as written in a rule file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub name: String,
    #[serde(default)]
    pub group: String,
    #[serde(default)]
    pub priority: i64,
    #[serde(default)]
    pub pre: String,
    pub nsw: String,
    #[serde(default)]
    pub post: String,
    pub context_len: usize,
    pub label: String,
}

#[derive(Deserialize)]
struct RuleFile {
    #[serde(default)]
    rule: Vec<RuleSpec>,
}

#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    rules: Vec<Rule>,
}

#[derive(Debug, Clone, Copy)]
pub struct RuleMatch<'a> {
    pub rule: &'a Rule,
    pub span: NswSpan,
    pub label: LabelId,
}

impl RuleSet {
    pub fn builtin(taxonomy: &Taxonomy) -> Self {
        Self::parse(DEFAULT_RULES, taxonomy).expect("built-in rules are valid")
    }

    pub fn parse(src: &str, taxonomy: &Taxonomy) -> Result<Self> {
        let file: RuleFile =
            toml::from_str(src).map_err(|e| Error::Config(format!("rules: {e}")))?;
        Self::from_specs(file.rule, taxonomy)
    }

    pub fn from_specs(specs: Vec<RuleSpec>, taxonomy: &Taxonomy) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut rules = Vec::with_capacity(specs.len());
        for spec in specs {
            if !seen.insert(spec.name.clone()) {
                return Err(Error::Config(format!(
                    "duplicate rule name `{}`",
                    spec.name
                )));
            }
            if spec.nsw.is_empty() {
                return Err(Error::Config(format!(
                    "rule `{}` has an empty nsw pattern",
                    spec.name
                )));
            }
            let label = taxonomy.id(&spec.label)?;
            let search = |pattern: &str| {
                Regex::new(pattern).map_err(|source| Error::Regex {
                    name: spec.name.clone(),
                    source,
                })
            };
            rules.push(Rule {
                pre: search(&spec.pre)?,
                post: search(&spec.post)?,
                nsw: full_match_regex(&spec.name, &spec.nsw)?,
                name: spec.name,
                group: spec.group,
                priority: spec.priority,
                context_len: spec.context_len,
                label,
            });
        }
        rules.sort_by(Rule::order);
        Ok(Self { rules })
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn match_nsw(&self, text: &[char], span: &NswSpan) -> Option<RuleMatch<'_>> {
        self.rules
            .iter()
            .find(|r| r.matches(text, span))
            .map(|rule| RuleMatch {
                rule,
                span: NswSpan::new(span.start, span.end, rule.label),
                label: rule.label,
            })
    }
}

pub fn compile_rules(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<RuleSet> {
    RuleSet::parse(&read_to_string(path)?, taxonomy)
}

/// Rule path for one span: match, then render. A match whose label cannot
/// render the surface counts as no match.
pub(crate) fn apply_rules(
    rules: &RuleSet,
    reader: &PatternReader,
    text: &[char],
    span: &NswSpan,
) -> Option<(String, LabelId, String)> {
    let m = rules.match_nsw(text, span)?;
    let surface: String = text[span.start..span.end].iter().collect();
    let sfw = reader.render(&surface, m.label).ok()?;
    Some((m.rule.name.clone(), m.label, sfw.text))
}

/// Standalone rule-based normalization: every extracted NSW is rendered by
/// its matching rule's label; unmatched NSW stay verbatim.
pub fn normalize_rule_based(
    rules: &RuleSet,
    reader: &PatternReader,
    text: &str,
) -> (String, Vec<NormalizationTrace>) {
    let chars: Vec<char> = text.chars().collect();
    let traces: Vec<NormalizationTrace> = extract_nsw(text)
        .into_iter()
        .map(|span| {
            let surface: String = chars[span.start..span.end].iter().collect();
            match apply_rules(rules, reader, &chars, &span) {
                Some((rule, label, sfw)) => NormalizationTrace {
                    span: NswSpan::new(span.start, span.end, label),
                    surface,
                    route: Route::Rule,
                    label: Some(label),
                    sfw: Some(sfw),
                    rule: Some(rule),
                    probabilities: None,
                    fallback_reason: None,
                },
                None => NormalizationTrace::unmatched(span, surface),
            }
        })
        .collect();
    (splice(&chars, &traces), traces)
}
