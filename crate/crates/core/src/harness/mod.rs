//! Evaluation harness: scenarios, repeated runs, JSON Lines records, and the
//! aggregate report.
//!
//! A run executes every task of a scenario once per repetition, strictly in
//! (repetition, task) order and one pipeline at a time, so the latency of a
//! record never overlaps another record's work.

mod report;

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{KbKind, Registry};
use crate::llm::LlmClient;
use crate::metrics::{classify, score, MetricConfig, MetricScores, OutcomeCategory, Rubric, RubricSpec};
use crate::retrieve_text::tokenize;
use crate::synth::{answer, AnswerOptions, StageTimings};

pub use report::{
    aggregate, largest_remainder, render_report, round_half_up, AggregateReport, CategoryShare, ReportFormat, ReportRow,
};

/// Repetitions per task when none is given.
pub const DEFAULT_REPETITIONS: usize = 50;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no records to aggregate")]
    NoRecords,
    #[error("repetitions must be at least 1")]
    BadRepetitions,
    #[error("cannot read {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("scenario syntax error: {0}")]
    ScenarioSyntax(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("{path} line {line}: {reason}")]
    RecordSyntax { path: PathBuf, line: usize, reason: String },
}

fn io_error(path: &Path, e: impl ToString) -> HarnessError {
    HarnessError::Io {
        path: path.to_owned(),
        reason: e.to_string(),
    }
}

/// One evaluation question with its expected answer.
#[derive(Debug, Clone)]
pub struct Task {
    pub query: String,
    pub reference: String,
    pub rubric: Rubric,
    pub kb_ids: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub tasks: Vec<Task>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    id: String,
    tasks: Vec<TaskFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    query: String,
    reference: String,
    #[serde(default)]
    rubric_path: Option<PathBuf>,
    #[serde(default)]
    rubric: Option<RubricSpec>,
    kbs: Vec<String>,
}

impl Scenario {
    /// Reads a scenario file; rubric paths resolve against its directory.
    pub fn load(path: &Path, registry: &Registry) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")), registry)
    }

    pub fn parse(text: &str, base_dir: &Path, registry: &Registry) -> Result<Self, HarnessError> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| HarnessError::ScenarioSyntax(e.to_string()))?;
        let invalid = |n: usize, msg: String| HarnessError::InvalidScenario(format!("task {}: {msg}", n + 1));
        let mut tasks = Vec::with_capacity(file.tasks.len());
        for (n, t) in file.tasks.into_iter().enumerate() {
            let rubric = match (t.rubric_path, t.rubric) {
                (Some(p), None) => Rubric::load(&base_dir.join(p)),
                (None, Some(spec)) => Rubric::new(spec),
                _ => return Err(invalid(n, "exactly one of rubric_path and rubric is required".into())),
            }
            .map_err(|e| invalid(n, e.to_string()))?;
            tasks.push(Task {
                query: t.query,
                reference: t.reference,
                rubric,
                kb_ids: t.kbs,
            });
        }
        let scenario = Scenario { id: file.id, tasks };
        scenario.validate(registry)?;
        Ok(scenario)
    }

    /// Checks task shape and, for the standard ids, the knowledge-base mix:
    /// A uses text only, B tables only, C at least one of each.
    pub fn validate(&self, registry: &Registry) -> Result<(), HarnessError> {
        if self.id.trim().is_empty() {
            return Err(HarnessError::InvalidScenario("empty id".into()));
        }
        if self.tasks.is_empty() {
            return Err(HarnessError::InvalidScenario("no tasks".into()));
        }
        for (n, t) in self.tasks.iter().enumerate() {
            let invalid = |msg: String| HarnessError::InvalidScenario(format!("task {}: {msg}", n + 1));
            if t.query.trim().is_empty() {
                return Err(invalid("empty query".into()));
            }
            if tokenize(&t.reference).is_empty() {
                return Err(invalid("reference has no words".into()));
            }
            if t.kb_ids.is_empty() {
                return Err(invalid("no knowledge bases".into()));
            }
            let mut kinds = Vec::new();
            for id in &t.kb_ids {
                let kb = registry
                    .get(id)
                    .ok_or_else(|| invalid(format!("unknown knowledge base {id:?}")))?;
                kinds.push(kb.kind());
            }
            let text = kinds.contains(&KbKind::Text);
            let table = kinds.contains(&KbKind::Table);
            let ok = match self.id.as_str() {
                "A" => !table,
                "B" => !text,
                "C" => text && table,
                _ => true,
            };
            if !ok {
                return Err(invalid(format!("knowledge-base kinds do not fit scenario {}", self.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordError {
    pub stage: String,
    pub message: String,
}

/// One pipeline execution. Indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model_id: String,
    pub scenario_id: String,
    pub task_index: usize,
    pub repetition: usize,
    pub outcome: OutcomeCategory,
    /// Absent exactly when the outcome is `error`.
    #[serde(default)]
    pub scores: Option<MetricScores>,
    pub latency_ms: f64,
    #[serde(default)]
    pub stage_timings: Option<StageTimings>,
    #[serde(default)]
    pub answer: Option<String>,
    #[serde(default)]
    pub error: Option<RecordError>,
    #[serde(default)]
    pub temperature: f64,
}

impl RunRecord {
    pub fn latency(&self) -> Duration {
        Duration::from_secs_f64(self.latency_ms.max(0.0) / 1000.0)
    }

    /// Copy with every timing field zeroed, for comparing runs.
    pub fn without_timing(&self) -> RunRecord {
        RunRecord {
            latency_ms: 0.0,
            stage_timings: self.stage_timings.map(|_| StageTimings::default()),
            ..self.clone()
        }
    }
}

/// Executes scenarios for one model against one client.
pub struct Runner<'a> {
    pub registry: &'a Registry,
    pub llm: &'a dyn LlmClient,
    pub answer: AnswerOptions,
    pub metrics: MetricConfig,
}

impl<'a> Runner<'a> {
    pub fn new(registry: &'a Registry, llm: &'a dyn LlmClient, model_id: &str) -> Self {
        Self {
            registry,
            llm,
            answer: AnswerOptions::new(model_id),
            metrics: MetricConfig::new(),
        }
    }

    /// Runs one task once against `registry`, which should hold exactly the
    /// task's knowledge bases. Pipeline failures become `error` records.
    pub fn run_task(
        &self,
        registry: &Registry,
        scenario_id: &str,
        task_index: usize,
        repetition: usize,
        task: &Task,
    ) -> RunRecord {
        let result = answer(&task.query, registry, self.llm, &self.answer);
        let mut record = RunRecord {
            model_id: self.answer.model_id.clone(),
            scenario_id: scenario_id.to_owned(),
            task_index,
            repetition,
            outcome: OutcomeCategory::Error,
            scores: None,
            latency_ms: 0.0,
            stage_timings: None,
            answer: None,
            error: None,
            temperature: self.answer.temperature,
        };
        match result {
            Ok(a) => {
                record.latency_ms = a.stage_timings.total.as_secs_f64() * 1000.0;
                record.stage_timings = Some(a.stage_timings);
                match score(&a.text, &task.reference, &self.metrics) {
                    Ok(scores) => {
                        record.outcome = classify::<()>(Ok(&a.text), &task.rubric);
                        record.scores = Some(scores);
                    }
                    // only reachable for references that bypassed validation
                    Err(e) => {
                        record.error = Some(RecordError {
                            stage: "metrics".into(),
                            message: e.to_string(),
                        })
                    }
                }
                record.answer = Some(a.text);
            }
            Err(e) => {
                record.latency_ms = e.elapsed.as_secs_f64() * 1000.0;
                record.error = Some(RecordError {
                    stage: e.stage().to_string(),
                    message: e.failure.to_string(),
                });
            }
        }
        record
    }

    /// Runs `repetitions` passes over the scenario, skipping (task,
    /// repetition) pairs in `done`, and hands each record to `sink` as soon
    /// as it exists.
    pub fn run_scenario_with<F>(
        &self,
        scenario: &Scenario,
        repetitions: usize,
        done: &HashSet<(usize, usize)>,
        mut sink: F,
    ) -> Result<(), HarnessError>
    where
        F: FnMut(RunRecord) -> Result<(), HarnessError>,
    {
        if repetitions == 0 {
            return Err(HarnessError::BadRepetitions);
        }
        scenario.validate(self.registry)?;
        let registries = scenario
            .tasks
            .iter()
            .map(|t| self.registry.subset(&t.kb_ids).expect("validated ids"))
            .collect::<Vec<_>>();
        for rep in 1..=repetitions {
            for (i, task) in scenario.tasks.iter().enumerate() {
                if done.contains(&(i + 1, rep)) {
                    continue;
                }
                sink(self.run_task(&registries[i], &scenario.id, i + 1, rep, task))?;
            }
        }
        Ok(())
    }

    pub fn run_scenario(&self, scenario: &Scenario, repetitions: usize) -> Result<Vec<RunRecord>, HarnessError> {
        let mut out = Vec::with_capacity(repetitions * scenario.tasks.len());
        self.run_scenario_with(scenario, repetitions, &HashSet::new(), |r| {
            out.push(r);
            Ok(())
        })?;
        Ok(out)
    }
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: RunRecord = serde_json::from_str(line).map_err(|e| HarnessError::RecordSyntax {
            path: path.to_owned(),
            line: n + 1,
            reason: e.to_string(),
        })?;
        if record.task_index == 0 || record.repetition == 0 {
            return Err(HarnessError::RecordSyntax {
                path: path.to_owned(),
                line: n + 1,
                reason: "indices are 1-based".into(),
            });
        }
        if (record.outcome == OutcomeCategory::Error) != record.scores.is_none() {
            return Err(HarnessError::RecordSyntax {
                path: path.to_owned(),
                line: n + 1,
                reason: "scores must be present exactly for non-error outcomes".into(),
            });
        }
        out.push(record);
    }
    Ok(out)
}

/// Appends records as JSON Lines, creating the file if needed.
pub struct RecordWriter {
    path: PathBuf,
    file: std::fs::File,
}

impl RecordWriter {
    pub fn append(path: &Path) -> Result<Self, HarnessError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_error(path, e))?;
        Ok(Self {
            path: path.to_owned(),
            file,
        })
    }

    pub fn write(&mut self, record: &RunRecord) -> Result<(), HarnessError> {
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| io_error(&self.path, e))
    }
}
