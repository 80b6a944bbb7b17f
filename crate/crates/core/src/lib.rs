//! Hybrid text normalization for Mandarin speech synthesis.
//!
//! Non-standard words (digit and symbol runs such as `10:30` or `30-10`)
//! are extracted from a sentence, routed either to a rule engine (for
//! definite patterns) or to a self-attention classifier that picks a
//! pattern label from the surrounding characters, checked against the
//! label's surface format and rendered into Han characters.
//!
//! ```
//! use hytn::HybridSystem;
//!
//! let sys = HybridSystem::builtin().unwrap();
//! let (out, _) = sys.normalize("请拨打911");
//! assert_eq!(out, "请拨打九幺幺");
//! ```

pub mod corpus;
pub mod error;
pub mod eval;
pub mod extractor;
pub mod labels;
pub mod legality;
pub mod neural;
pub mod pattern_reader;
pub mod pipeline;
pub mod rule_engine;

pub use corpus::{ContextWindow, LabeledSentence, NswSpan};
pub use error::{Error, Result};
pub use extractor::{extract_nsw, priority_check, PriorityList};
pub use labels::{LabelId, PatternLabel, Taxonomy};
pub use legality::FormatRegistry;
pub use neural::{Classifier, ClassifierConfig, EncoderParams, Vocabulary};
pub use pattern_reader::{read_number_positional, spell_digits, PatternReader, RenderedSfw};
pub use pipeline::{HybridSystem, NormalizationTrace, Route};
pub use rule_engine::{Rule, RuleSet};
