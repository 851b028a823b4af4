use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use super::MetricError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Substring,
    Regex,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSpec {
    pub kind: PatternKind,
    pub value: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RubricSpec {
    pub required: Vec<PatternSpec>,
    #[serde(default)]
    pub bonus: Vec<PatternSpec>,
    #[serde(default)]
    pub forbidden: Vec<PatternSpec>,
}

/// Case-insensitive fact pattern.
#[derive(Debug, Clone)]
pub struct Pattern {
    pub spec: PatternSpec,
    compiled: Compiled,
}

#[derive(Debug, Clone)]
enum Compiled {
    Substring(String),
    Regex(Regex),
}

impl Pattern {
    pub fn new(spec: PatternSpec) -> Result<Self, MetricError> {
        if spec.value.is_empty() {
            return Err(MetricError::InvalidRubric("empty pattern".into()));
        }
        let compiled = match spec.kind {
            PatternKind::Substring => Compiled::Substring(spec.value.to_lowercase()),
            PatternKind::Regex => Compiled::Regex(
                RegexBuilder::new(&spec.value)
                    .case_insensitive(true)
                    .build()
                    .map_err(|e| MetricError::InvalidRubric(e.to_string()))?,
            ),
        };
        Ok(Self { spec, compiled })
    }

    pub fn substring(value: &str) -> Self {
        Self::new(PatternSpec {
            kind: PatternKind::Substring,
            value: value.to_owned(),
        })
        .expect("non-empty substring")
    }

    pub fn is_match(&self, text: &str) -> bool {
        match &self.compiled {
            Compiled::Substring(s) => text.to_lowercase().contains(s.as_str()),
            Compiled::Regex(re) => re.is_match(text),
        }
    }
}

/// Validated fact lists: `required` is non-empty and no pattern appears in
/// more than one list.
#[derive(Debug, Clone)]
pub struct Rubric {
    pub required: Vec<Pattern>,
    pub bonus: Vec<Pattern>,
    pub forbidden: Vec<Pattern>,
}

impl Rubric {
    pub fn new(spec: RubricSpec) -> Result<Self, MetricError> {
        if spec.required.is_empty() {
            return Err(MetricError::InvalidRubric("required facts are empty".into()));
        }
        let lists = [&spec.required, &spec.bonus, &spec.forbidden];
        for (a, la) in lists.iter().enumerate() {
            for lb in &lists[a + 1..] {
                if let Some(p) = la.iter().find(|p| lb.contains(p)) {
                    return Err(MetricError::InvalidRubric(format!(
                        "pattern {:?} appears in two lists",
                        p.value
                    )));
                }
            }
        }
        let compile = |v: Vec<PatternSpec>| v.into_iter().map(Pattern::new).collect::<Result<Vec<_>, _>>();
        Ok(Self {
            required: compile(spec.required)?,
            bonus: compile(spec.bonus)?,
            forbidden: compile(spec.forbidden)?,
        })
    }

    /// Rubric of plain substrings.
    pub fn substrings(required: &[&str], bonus: &[&str], forbidden: &[&str]) -> Result<Self, MetricError> {
        let specs = |v: &[&str]| {
            v.iter()
                .map(|s| PatternSpec {
                    kind: PatternKind::Substring,
                    value: (*s).to_owned(),
                })
                .collect()
        };
        Self::new(RubricSpec {
            required: specs(required),
            bonus: specs(bonus),
            forbidden: specs(forbidden),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, MetricError> {
        let spec: RubricSpec = serde_json::from_str(text).map_err(|e| MetricError::InvalidRubric(e.to_string()))?;
        Self::new(spec)
    }

    pub fn load(path: &Path) -> Result<Self, MetricError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MetricError::InvalidRubric(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| MetricError::InvalidRubric(format!("{}: {e}", path.display())))
    }

    pub fn spec(&self) -> RubricSpec {
        let specs = |v: &[Pattern]| v.iter().map(|p| p.spec.clone()).collect();
        RubricSpec {
            required: specs(&self.required),
            bonus: specs(&self.bonus),
            forbidden: specs(&self.forbidden),
        }
    }
}
