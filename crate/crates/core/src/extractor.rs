//! NSW extraction and the priority check.
//!
//! Only digit- and symbol-related NSW are extracted. A span is a run of
//! digits interleaved with `. , : - ~ — /`, optionally led by `$` and
//! optionally closed by `%` or `/`. Runs without a digit are never spans.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;

use crate::corpus::NswSpan;
use crate::error::{read_to_string, Error, Result};
use crate::legality::full_match_regex;

/// Characters that may appear inside an NSW besides ASCII digits.
pub const NSW_SYMBOLS: &[char] = &['.', ',', ':', '-', '~', '—', '/', '%', '$'];

pub const EXTRACTION_PATTERN: &str = r"\$?[0-9]+(?:[.,:~/\-—][0-9]+)*[%/]?";

/// Built-in priority list.
pub const DEFAULT_PRIORITY: &str = include_str!("../assets/priority.txt");

/// Marker that turns a priority-file line into a regular expression.
pub const USER_PATTERN_MARKER: &str = "re:";

static EXTRACTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(EXTRACTION_PATTERN).expect("extraction pattern"));
static EXTRACTION_FULL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!("^(?:{EXTRACTION_PATTERN})$")).expect("pattern"));

/// Leftmost-longest, non-overlapping NSW spans in character offsets.
pub fn extract_nsw(text: &str) -> Vec<NswSpan> {
    let mut spans = Vec::new();
    let mut chars_before = 0usize;
    let mut last_byte = 0usize;
    for m in EXTRACTION.find_iter(text) {
        chars_before += text[last_byte..m.start()].chars().count();
        let len = m.as_str().chars().count();
        spans.push(NswSpan::unlabeled(chars_before, chars_before + len));
        chars_before += len;
        last_byte = m.end();
    }
    spans
}

/// True when `surface` is exactly one extractable NSW.
pub fn is_nsw_surface(surface: &str) -> bool {
    EXTRACTION_FULL.is_match(surface)
}

/// Definite NSW that bypass the classifier.
#[derive(Debug, Clone, Default)]
pub struct PriorityList {
    pub exact_strings: BTreeSet<String>,
    user_patterns: Vec<(String, Regex)>,
}

impl PriorityList {
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_PRIORITY).expect("built-in priority list is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_to_string(path)?)
    }

    /// One entry per line. `#` starts a comment line, `re:` a user pattern;
    /// every other non-blank line is an exact string.
    pub fn parse(src: &str) -> Result<Self> {
        let mut list = Self::default();
        for (i, raw) in src.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(pattern) = line.strip_prefix(USER_PATTERN_MARKER) {
                let pattern = pattern.trim();
                if pattern.is_empty() {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: "empty user pattern".into(),
                    });
                }
                let re = full_match_regex(&format!("priority line {}", i + 1), pattern)?;
                list.user_patterns.push((pattern.to_string(), re));
            } else {
                list.exact_strings.insert(line.to_string());
            }
        }
        Ok(list)
    }

    pub fn add_pattern(&mut self, pattern: &str) -> Result<()> {
        let re = full_match_regex("user pattern", pattern)?;
        self.user_patterns.push((pattern.to_string(), re));
        Ok(())
    }

    pub fn user_patterns(&self) -> impl Iterator<Item = &str> {
        self.user_patterns.iter().map(|(src, _)| src.as_str())
    }

    pub fn check(&self, surface: &str) -> bool {
        self.exact_strings.contains(surface)
            || self
                .user_patterns
                .iter()
                .any(|(_, re)| re.is_match(surface))
    }
}

pub fn priority_check(surface: &str, list: &PriorityList) -> bool {
    list.check(surface)
}
