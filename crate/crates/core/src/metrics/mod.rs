//! Answer quality measures: BLEU, METEOR, length ratio and rubric-based
//! outcome classification.

mod bleu;
mod meteor;
mod porter;
mod rubric;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{bleu, modified_precision, BLEU_EPSILON};
pub use meteor::{
    align, greedy_alignment, meteor, meteor_from_counts, stage_table, AlignmentStats, MatchStage, SynonymTable,
    EXACT_SEARCH_MAX_CAND, EXACT_SEARCH_STATE_BUDGET,
};
pub use porter::porter_stem;
pub use rubric::{Pattern, PatternKind, PatternSpec, Rubric, RubricSpec};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("reference has no tokens")]
    EmptyReference,
    #[error("max_n must be at least 1")]
    BadMaxN,
    #[error("invalid rubric: {0}")]
    InvalidRubric(String),
    #[error("invalid synonym table: {0}")]
    BadSynonymTable(String),
}

/// Candidate length as a percentage of the reference, counting Unicode
/// scalar values.
pub fn length_ratio(candidate: &str, reference: &str) -> Result<f64, MetricError> {
    let r = reference.chars().count();
    if r == 0 {
        return Err(MetricError::EmptyReference);
    }
    Ok(100.0 * candidate.chars().count() as f64 / r as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub bleu: f64,
    pub meteor: f64,
    /// Percent.
    pub length_ratio: f64,
}

fn default_max_n() -> usize {
    4
}

/// Metric options as they appear in configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricOptions {
    #[serde(default = "default_max_n")]
    pub max_n: usize,
    #[serde(default)]
    pub synonyms_path: Option<PathBuf>,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            max_n: default_max_n(),
            synonyms_path: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MetricConfig {
    pub max_n: usize,
    pub synonyms: Option<SynonymTable>,
}

impl MetricConfig {
    pub fn new() -> Self {
        Self {
            max_n: default_max_n(),
            synonyms: None,
        }
    }

    pub fn from_options(options: &MetricOptions) -> Result<Self, MetricError> {
        if options.max_n == 0 {
            return Err(MetricError::BadMaxN);
        }
        Ok(Self {
            max_n: options.max_n,
            synonyms: options.synonyms_path.as_deref().map(SynonymTable::load).transpose()?,
        })
    }
}

pub fn score(candidate: &str, reference: &str, config: &MetricConfig) -> Result<MetricScores, MetricError> {
    Ok(MetricScores {
        bleu: bleu(candidate, reference, config.max_n)?,
        meteor: meteor(candidate, reference, config.synonyms.as_ref())?,
        length_ratio: length_ratio(candidate, reference)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeCategory {
    Error,
    Incorrect,
    Partial,
    Correct,
    CorrectWithAdditionalData,
    Hallucination,
}

impl OutcomeCategory {
    /// Reporting order.
    pub const ALL: [OutcomeCategory; 6] = [
        OutcomeCategory::Error,
        OutcomeCategory::Incorrect,
        OutcomeCategory::Partial,
        OutcomeCategory::Correct,
        OutcomeCategory::CorrectWithAdditionalData,
        OutcomeCategory::Hallucination,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_success(self) -> bool {
        matches!(
            self,
            OutcomeCategory::Correct | OutcomeCategory::CorrectWithAdditionalData
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeCategory::Error => "error",
            OutcomeCategory::Incorrect => "incorrect",
            OutcomeCategory::Partial => "partial",
            OutcomeCategory::Correct => "correct",
            OutcomeCategory::CorrectWithAdditionalData => "correct_with_additional_data",
            OutcomeCategory::Hallucination => "hallucination",
        }
    }
}

impl fmt::Display for OutcomeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of one answer against its rubric. Precedence: pipeline error,
/// forbidden fact, all required plus a bonus fact, all required, some
/// required, none.
pub fn classify<E>(result: Result<&str, E>, rubric: &Rubric) -> OutcomeCategory {
    let Ok(text) = result else {
        return OutcomeCategory::Error;
    };
    if rubric.forbidden.iter().any(|p| p.is_match(text)) {
        return OutcomeCategory::Hallucination;
    }
    let found = rubric.required.iter().filter(|p| p.is_match(text)).count();
    if found == rubric.required.len() {
        if rubric.bonus.iter().any(|p| p.is_match(text)) {
            OutcomeCategory::CorrectWithAdditionalData
        } else {
            OutcomeCategory::Correct
        }
    } else if found > 0 {
        OutcomeCategory::Partial
    } else {
        OutcomeCategory::Incorrect
    }
}
