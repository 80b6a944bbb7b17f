#![allow(dead_code)]

use hytn::corpus::NswSpan;
use hytn::rule_engine::{RuleSet, RuleSpec};
use hytn::{read_number_positional, spell_digits, PatternReader, Taxonomy};
use rand::seq::SliceRandom;
use rand::Rng;

pub const FIXTURES: &str = include_str!("../../assets/render_fixtures.tsv");

pub struct Fixture {
    pub line: usize,
    pub kind: String,
    pub input: String,
    pub expected: String,
}

pub fn fixtures() -> Vec<Fixture> {
    FIXTURES
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            let cols: Vec<&str> = l.split('\t').collect();
            assert_eq!(cols.len(), 3, "line {}: {l:?}", i + 1);
            Fixture {
                line: i + 1,
                kind: cols[0].into(),
                input: cols[1].into(),
                expected: cols[2].into(),
            }
        })
        .collect()
}

/// Renders one fixture row; `kind` is either a raw converter name or a label.
pub fn render_fixture(
    f: &Fixture,
    tax: &Taxonomy,
    reader: &PatternReader,
) -> Result<String, String> {
    let r = match f.kind.as_str() {
        "positional" => read_number_positional(&f.input, false),
        "positional_liang" => read_number_positional(&f.input, true),
        "spell" => spell_digits(&f.input, false),
        "spell_yao" => spell_digits(&f.input, true),
        label => {
            let id = tax.id(label).map_err(|e| e.to_string())?;
            reader.render(&f.input, id).map(|s| s.text)
        }
    };
    r.map_err(|e| e.to_string())
}

/// Failing rows as `line: kind input expected != got`.
pub fn fixture_failures() -> (usize, Vec<String>) {
    let tax = Taxonomy::builtin();
    let reader = PatternReader::new(&tax).unwrap();
    let rows = fixtures();
    let bad = rows
        .iter()
        .filter_map(|f| match render_fixture(f, &tax, &reader) {
            Ok(got) if got == f.expected => None,
            got => Some(format!(
                "{}: {} {} expected {} got {:?}",
                f.line, f.kind, f.input, f.expected, got
            )),
        })
        .collect();
    (rows.len(), bad)
}

fn digit(c: char) -> Option<u64> {
    Some(match c {
        '零' => 0,
        '一' => 1,
        '二' | '两' => 2,
        '三' => 3,
        '四' => 4,
        '五' => 5,
        '六' => 6,
        '七' => 7,
        '八' => 8,
        '九' => 9,
        _ => return None,
    })
}

/// Brute-force reader of positional Chinese numerals. Rejects strings with
/// misplaced units rather than guessing.
pub fn parse_han_numeral(s: &str) -> Option<u64> {
    if s.is_empty() {
        return None;
    }
    let (mut total, mut section, mut pending): (u64, u64, Option<u64>) = (0, 0, None);
    for c in s.chars() {
        if let Some(d) = digit(c) {
            if pending.is_some_and(|p| p != 0) {
                return None;
            }
            pending = Some(d);
            continue;
        }
        let unit = match c {
            '十' => 10,
            '百' => 100,
            '千' => 1000,
            '万' => 10_000,
            '亿' => 100_000_000,
            _ => return None,
        };
        let d = pending.take().unwrap_or(0);
        match unit {
            10 | 100 | 1000 => {
                let d = if d == 0 && unit == 10 { 1 } else { d };
                if d == 0 {
                    return None;
                }
                section += d * unit;
            }
            10_000 => {
                section += d;
                if section == 0 {
                    return None;
                }
                total += section * unit;
                section = 0;
            }
            _ => {
                section += d;
                total = (total + section) * unit;
                section = 0;
            }
        }
    }
    Some(total + section + pending.unwrap_or(0))
}

/// Surface spellings the renderer must never produce.
pub fn canonical(s: &str) -> bool {
    !s.contains("零零") && (s == "零" || !s.ends_with('零')) && !s.starts_with("一十")
}

/// First `n` whose positional reading fails to round-trip, if any.
pub fn round_trip_failure(limit: u64) -> Option<String> {
    for n in 0..limit {
        for liang in [false, true] {
            let text = match read_number_positional(&n.to_string(), liang) {
                Ok(t) => t,
                Err(e) => return Some(format!("{n}: {e}")),
            };
            if parse_han_numeral(&text) != Some(n) || !canonical(&text) {
                return Some(format!("{n} (liang {liang}) -> {text}"));
            }
            if !liang && text.contains('两') {
                return Some(format!("{n} -> {text} uses 两 without liang"));
            }
        }
    }
    None
}

// Random rule instances for the brute-force matcher.

fn context(rng: &mut impl Rng) -> Vec<char> {
    let len = rng.gen_range(0..=6);
    (0..len)
        .map(|_| *CONTEXT_ALPHABET.choose(rng).unwrap())
        .collect()
}

const CONTEXT_ALPHABET: &[char] = &['甲', '乙', '丙', '丁', '戊', '己'];
const KEYWORDS: &[&str] = &["甲乙", "丙", "丁戊", "己甲", "乙"];

type Membership = fn(&str) -> bool;

/// NSW patterns paired with an independent membership test.
pub const NSW_PATTERNS: &[(&str, Membership)] = &[
    (r"\d+", |s| {
        !s.is_empty() && s.chars().all(|c| c.is_ascii_digit())
    }),
    (r"\d*1\d*", |s| {
        !s.is_empty() && s.chars().all(|c| c.is_ascii_digit()) && s.contains('1')
    }),
    (r"\d+%", |s| {
        s.strip_suffix('%')
            .is_some_and(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()))
    }),
    (r"\d{1,2}:\d{2}", |s| match s.split_once(':') {
        Some((a, b)) => {
            (1..=2).contains(&a.len())
                && b.len() == 2
                && a.chars().chain(b.chars()).all(|c| c.is_ascii_digit())
        }
        None => false,
    }),
    (r"\d{1,3}-\d{1,3}", |s| match s.split_once('-') {
        Some((a, b)) => {
            (1..=3).contains(&a.len())
                && (1..=3).contains(&b.len())
                && a.chars().chain(b.chars()).all(|c| c.is_ascii_digit())
        }
        None => false,
    }),
];

const SURFACES: &[&str] = &[
    "911", "2020", "45%", "10:30", "3:2", "30-10", "7", "100%", "1-2", "12:05",
];

pub struct RandomRule {
    pub name: String,
    pub priority: i64,
    pub context_len: usize,
    pub pre: Option<String>,
    pub post: Option<String>,
    pub nsw: usize,
    pub label: String,
}

impl RandomRule {
    pub fn spec(&self) -> RuleSpec {
        RuleSpec {
            name: self.name.clone(),
            group: "random".into(),
            priority: self.priority,
            pre: self.pre.clone().unwrap_or_default(),
            nsw: NSW_PATTERNS[self.nsw].0.into(),
            post: self.post.clone().unwrap_or_default(),
            context_len: self.context_len,
            label: self.label.clone(),
        }
    }

    /// Literal-substring reimplementation of a rule test.
    pub fn brute_matches(&self, text: &[char], start: usize, end: usize) -> bool {
        let surface: String = text[start..end].iter().collect();
        let pre: String = text[start.saturating_sub(self.context_len)..start]
            .iter()
            .collect();
        let post: String = text[end..(end + self.context_len).min(text.len())]
            .iter()
            .collect();
        (NSW_PATTERNS[self.nsw].1)(&surface)
            && self.pre.as_ref().is_none_or(|k| pre.contains(k.as_str()))
            && self.post.as_ref().is_none_or(|k| post.contains(k.as_str()))
    }
}

pub struct RuleInstance {
    pub rules: Vec<RandomRule>,
    pub text: Vec<char>,
    pub start: usize,
    pub end: usize,
}

impl RuleInstance {
    pub fn random(rng: &mut impl Rng, tax: &Taxonomy) -> Self {
        let names = tax.names();
        let n_rules = rng.gen_range(1..=12);
        // Small ranges on purpose: ties in context_len and priority are the
        // interesting cases.
        let rules = (0..n_rules)
            .map(|i| RandomRule {
                name: format!("r{:02}_{}", rng.gen_range(0..100), i),
                priority: rng.gen_range(-2..=2),
                context_len: rng.gen_range(0..=4),
                pre: rng
                    .gen_bool(0.6)
                    .then(|| KEYWORDS.choose(rng).unwrap().to_string()),
                post: rng
                    .gen_bool(0.4)
                    .then(|| KEYWORDS.choose(rng).unwrap().to_string()),
                nsw: rng.gen_range(0..NSW_PATTERNS.len()),
                label: names.choose(rng).unwrap().clone(),
            })
            .collect();
        let left = context(rng);
        let right = context(rng);
        let surface: Vec<char> = SURFACES.choose(rng).unwrap().chars().collect();
        let mut text = left.clone();
        text.extend(&surface);
        text.extend(&right);
        Self {
            rules,
            start: left.len(),
            end: left.len() + surface.len(),
            text,
        }
    }

    /// Name of the rule the brute-force matcher selects.
    pub fn brute_winner(&self) -> Option<&str> {
        self.rules
            .iter()
            .filter(|r| r.brute_matches(&self.text, self.start, self.end))
            .max_by(|a, b| {
                a.context_len
                    .cmp(&b.context_len)
                    .then(a.priority.cmp(&b.priority))
                    .then_with(|| b.name.cmp(&a.name))
            })
            .map(|r| r.name.as_str())
    }

    pub fn engine_winner(&self, tax: &Taxonomy) -> Option<String> {
        let set =
            RuleSet::from_specs(self.rules.iter().map(RandomRule::spec).collect(), tax).unwrap();
        set.match_nsw(&self.text, &NswSpan::unlabeled(self.start, self.end))
            .map(|m| m.rule.name.clone())
    }
}

/// Number of disagreements between engine and brute force over `n` instances.
pub fn rule_disagreements(n: usize, seed: u64) -> Vec<String> {
    use rand::SeedableRng;
    let tax = Taxonomy::builtin();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    for i in 0..n {
        let inst = RuleInstance::random(&mut rng, &tax);
        let want = inst.brute_winner().map(str::to_string);
        let got = inst.engine_winner(&tax);
        if want != got {
            let text: String = inst.text.iter().collect();
            bad.push(format!(
                "instance {i} `{text}`: brute {want:?} engine {got:?}"
            ));
        }
    }
    bad
}

/// A quickly trained classifier good enough to exercise the neural route.
pub fn small_system(seed: u64) -> hytn::HybridSystem {
    use hytn::corpus::{generate_synthetic_corpus, CorpusDistribution};
    use hytn::{Classifier, ClassifierConfig, FormatRegistry, HybridSystem};
    let tax = Taxonomy::builtin();
    let formats = FormatRegistry::new(&tax).unwrap();
    let corpus =
        generate_synthetic_corpus(&tax, &CorpusDistribution::builtin(&tax), 400, seed).unwrap();
    let cfg = ClassifierConfig {
        epochs: 2,
        model_dim: 16,
        ff_dim: 32,
        heads: 2,
        seed,
        ..Default::default()
    };
    let (clf, _) = Classifier::fit(&corpus, &cfg, &tax, &formats, |_| {}).unwrap();
    HybridSystem::builtin()
        .unwrap()
        .with_classifier(clf)
        .unwrap()
}

/// Sentences with several NSW each plus noise lines that exercise the
/// extractor edges.
pub fn preservation_corpus(n: usize, seed: u64) -> Vec<String> {
    use hytn::corpus::{CorpusDistribution, CorpusGenerator, GenerationOptions, TemplateRegistry};
    use hytn::FormatRegistry;
    use rand::SeedableRng;
    let tax = Taxonomy::builtin();
    let formats = FormatRegistry::new(&tax).unwrap();
    let templates = TemplateRegistry::builtin(&tax);
    let generator = CorpusGenerator {
        taxonomy: &tax,
        templates: &templates,
        formats: &formats,
    };
    let opts = GenerationOptions {
        spans_per_sentence: (1, 3),
    };
    let generated = n - n / 5;
    let mut out: Vec<String> = generator
        .generate(&CorpusDistribution::builtin(&tax), generated, seed, &opts)
        .unwrap()
        .into_iter()
        .map(|s| s.text)
        .collect();
    let pieces = [
        "abc", " ", "，", "。", "1", "23", "4.5", "6,7", "8:9", "$", "%", "/", "-", "~", "—",
        "你好", "🙂", "Ⅻ", "٣", "x1y", "..", "::", "3.", "$$5", "1/2/", "\t",
    ];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    while out.len() < n {
        let k = rng.gen_range(1..10);
        out.push((0..k).map(|_| *pieces.choose(&mut rng).unwrap()).collect());
    }
    out
}

/// Checks one normalized sentence: the output must be the input with each
/// extracted NSW replaced by its trace's SFW (or kept), nothing else.
pub fn check_preserved(
    input: &str,
    output: &str,
    traces: &[hytn::NormalizationTrace],
) -> Result<(), String> {
    let chars: Vec<char> = input.chars().collect();
    let spans = hytn::extract_nsw(input);
    if spans.len() != traces.len() {
        return Err(format!("{} spans but {} traces", spans.len(), traces.len()));
    }
    let mut expected = String::new();
    let mut cursor = 0;
    for (span, trace) in spans.iter().zip(traces) {
        if (span.start, span.end) != (trace.span.start, trace.span.end) {
            return Err(format!(
                "trace span {:?} for extracted {:?}",
                trace.span, span
            ));
        }
        expected.extend(&chars[cursor..span.start]);
        match &trace.sfw {
            Some(sfw) => {
                if sfw.chars().any(|c| c.is_ascii_digit()) {
                    return Err(format!("SFW `{sfw}` still has digits"));
                }
                expected.push_str(sfw);
            }
            None => expected.extend(&chars[span.start..span.end]),
        }
        cursor = span.end;
    }
    expected.extend(&chars[cursor..]);
    if expected != output {
        return Err(format!("`{input}` -> `{output}`, expected `{expected}`"));
    }
    if hytn::pipeline::unsplice(output, traces) != input {
        return Err(format!(
            "unsplice of `{output}` does not give back `{input}`"
        ));
    }
    Ok(())
}
