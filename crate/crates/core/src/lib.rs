//! Clinical abnormality decomposition, matching, scoring and the
//! trajectory-integral reward used for group-relative policy optimization.

pub mod corpus;
pub mod divergence;
pub mod error;
pub mod extract;
pub mod fixtures;
pub mod grpo;
pub mod lexicon;
pub mod matching;
pub mod mcq;
pub mod metrics;
pub mod registry;
pub mod render;
pub mod reward;
pub mod surface;
pub mod synthetic;
pub mod text;
pub mod units;

pub use error::SchemaError;
pub use extract::{Extractor, RuleBasedExtractor};
pub use matching::{LexicalMatcher, MatchResult, Matcher, Prediction, UnitJudgment};
pub use metrics::MetricReport;
pub use reward::{RewardBreakdown, RewardConfig};
pub use units::{AbnormalityUnit, Certainty, Organ, ReportDecomposition};
