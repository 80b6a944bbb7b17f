//! Per-label surface-format checks.
//!
//! The same registry backs the classifier's softmax mask and the verifier
//! that runs after classification, so the two cannot drift apart.

use regex::Regex;

use crate::error::{Error, Result};
use crate::labels::{LabelId, Taxonomy};

#[derive(Debug, Clone)]
pub struct FormatRegistry {
    patterns: Vec<Regex>,
}

impl FormatRegistry {
    pub fn new(taxonomy: &Taxonomy) -> Result<Self> {
        let patterns = taxonomy
            .labels()
            .iter()
            .map(|l| full_match_regex(&l.name, &l.format_pattern))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { patterns })
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// `flags[l]` is true iff `surface` fully matches label `l`'s pattern.
    pub fn legal_labels(&self, surface: &str) -> Vec<bool> {
        self.patterns
            .iter()
            .map(|re| re.is_match(surface))
            .collect()
    }

    pub fn verify(&self, surface: &str, label: LabelId) -> Result<bool> {
        self.patterns
            .get(label.index())
            .map(|re| re.is_match(surface))
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }
}

/// Compiles `pattern` anchored at both ends.
pub(crate) fn full_match_regex(name: &str, pattern: &str) -> Result<Regex> {
    Regex::new(&format!("^(?:{pattern})$")).map_err(|source| Error::Regex {
        name: name.to_string(),
        source,
    })
}
