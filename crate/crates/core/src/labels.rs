//! The closed set of NSW pattern groups.
//!
//! A [`Taxonomy`] is the label universe shared by every other component: the
//! rule engine resolves rule labels against it, the format registry compiles
//! its patterns, the pattern reader dispatches on its renderer kinds and the
//! classifier sizes its output layer from it.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};

/// Built-in registry file: ten pattern groups plus a currency group.
pub const DEFAULT_REGISTRY: &str = include_str!("../assets/registry.toml");

/// Dense label index into a [`Taxonomy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(pub u16);

impl LabelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Which process function turns an NSW of this label into spoken form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RendererKind {
    ReadNumber,
    SpellDigits,
    SpellYao,
    TwoLiang,
    Percent,
    Range,
    ScoreRatio,
    SlashPer,
    Time,
    DateYmd,
    Currency,
}

impl RendererKind {
    /// Renderer used for the built-in label names when a registry entry does
    /// not name one explicitly.
    pub fn for_builtin_name(name: &str) -> Option<Self> {
        Some(match name {
            "A_Read_No_Zero" => Self::ReadNumber,
            "A_Spell_Keep_Zero" => Self::SpellDigits,
            "A_One_Yao_Spell" => Self::SpellYao,
            "A_Two_Liang" => Self::TwoLiang,
            "B_Percent" => Self::Percent,
            "B_Range" => Self::Range,
            "B_Score_Ratio" => Self::ScoreRatio,
            "B_Slash_Per" => Self::SlashPer,
            "B_Time" => Self::Time,
            "B_Date_YMD" => Self::DateYmd,
            "B_Currency" => Self::Currency,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternLabel {
    pub id: LabelId,
    pub name: String,
    /// Full-match regular expression over NSW surface strings.
    pub format_pattern: String,
    pub renderer: RendererKind,
    pub description: String,
}

#[derive(Debug, Deserialize)]
struct RegistryFile {
    #[serde(default)]
    label: Vec<RegistryEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryEntry {
    name: String,
    pattern: String,
    #[serde(default)]
    renderer: Option<RendererKind>,
    #[serde(default)]
    description: String,
}

/// Ordered label universe. Ids are dense and names are unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    labels: Vec<PatternLabel>,
    by_name: HashMap<String, LabelId>,
}

/// Upper bound on registry size (the full system has 36 groups).
pub const MAX_LABELS: usize = 36;

impl Taxonomy {
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_REGISTRY).expect("built-in registry is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_to_string(path)?)
    }

    pub fn parse(src: &str) -> Result<Self> {
        let file: RegistryFile =
            toml::from_str(src).map_err(|e| Error::Config(format!("registry: {e}")))?;
        let entries = file
            .label
            .into_iter()
            .map(|e| {
                let renderer = match e.renderer {
                    Some(r) => r,
                    None => RendererKind::for_builtin_name(&e.name).ok_or_else(|| {
                        Error::Config(format!("label `{}` needs an explicit renderer", e.name))
                    })?,
                };
                Ok((e.name, e.pattern, renderer, e.description))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_entries(entries)
    }

    fn from_entries(entries: Vec<(String, String, RendererKind, String)>) -> Result<Self> {
        if entries.len() > MAX_LABELS {
            return Err(Error::Config(format!(
                "registry has {} labels, at most {MAX_LABELS} are supported",
                entries.len()
            )));
        }
        let mut labels = Vec::with_capacity(entries.len());
        let mut by_name = HashMap::new();
        for (i, (name, format_pattern, renderer, description)) in entries.into_iter().enumerate() {
            let id = LabelId(i as u16);
            if by_name.insert(name.clone(), id).is_some() {
                return Err(Error::Config(format!("duplicate label `{name}`")));
            }
            if format_pattern.is_empty() {
                return Err(Error::Config(format!(
                    "label `{name}` has an empty pattern"
                )));
            }
            labels.push(PatternLabel {
                id,
                name,
                format_pattern,
                renderer,
                description,
            });
        }
        Ok(Self { labels, by_name })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[PatternLabel] {
        &self.labels
    }

    pub fn get(&self, id: LabelId) -> Option<&PatternLabel> {
        self.labels.get(id.index())
    }

    pub fn id(&self, name: &str) -> Result<LabelId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }

    pub fn name(&self, id: LabelId) -> &str {
        self.labels
            .get(id.index())
            .map(|l| l.name.as_str())
            .unwrap_or("<unregistered>")
    }

    pub fn names(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.name.clone()).collect()
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_ids_are_dense() {
        let tax = Taxonomy::builtin();
        assert_eq!(tax.len(), 11);
        for (i, l) in tax.labels().iter().enumerate() {
            assert_eq!(l.id.index(), i);
            assert_eq!(tax.id(&l.name).unwrap(), l.id);
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let src = r#"
            [[label]]
            name = "B_Time"
            pattern = '\d+:\d+'
            [[label]]
            name = "B_Time"
            pattern = '\d+'
        "#;
        assert!(matches!(Taxonomy::parse(src), Err(Error::Config(_))));
    }

    #[test]
    fn custom_label_needs_renderer() {
        let src = "[[label]]\nname = \"B_Fraction\"\npattern = '\\d+/\\d+'\n";
        assert!(Taxonomy::parse(src).is_err());
        let src = "[[label]]\nname = \"B_Fraction\"\npattern = '\\d+/\\d+'\nrenderer = \"range\"\n";
        let tax = Taxonomy::parse(src).unwrap();
        assert_eq!(tax.labels()[0].renderer, RendererKind::Range);
    }
}
