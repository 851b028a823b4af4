use std::collections::HashSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{HarnessError, RunRecord};
use crate::metrics::OutcomeCategory;

/// Rounds half away from zero for the non-negative values used here. The
/// 1e-9 nudge absorbs binary representation error, so 0.125 at two places
/// gives 0.13 even when stored as 0.12499999999999999.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (x * scale + 0.5 + 1e-9).floor() / scale
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryShare {
    pub category: OutcomeCategory,
    pub count: usize,
    pub percent: u32,
}

/// Aggregates for one (model, scenario) pair. Score means cover non-error
/// records and are `None` when every record is an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model_id: String,
    pub scenario_id: String,
    pub records: usize,
    pub scored_records: usize,
    pub tasks: usize,
    pub repetitions: usize,
    /// Seconds, two decimals.
    pub mean_latency_s: f64,
    pub mean_bleu: Option<f64>,
    pub mean_meteor: Option<f64>,
    /// Integer percent.
    pub mean_length_ratio: Option<f64>,
    pub success_percent: u32,
    /// All six categories in reporting order; percents sum to 100.
    pub distribution: Vec<CategoryShare>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    /// Scenarios in first-appearance order, models in first-appearance order
    /// within each scenario.
    pub rows: Vec<ReportRow>,
}

/// Integer percentages of `counts` summing to exactly 100: floors first, then
/// the leftover points go to the largest remainders, earlier categories
/// winning ties.
pub fn largest_remainder(counts: &[usize]) -> Vec<u32> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut out: Vec<u32> = counts.iter().map(|&c| (100 * c / total) as u32).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(100 * counts[i] % total), i));
    let short = 100 - out.iter().sum::<u32>();
    for &i in order.iter().take(short as usize) {
        out[i] += 1;
    }
    out
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn row(group: &[&RunRecord]) -> ReportRow {
    let first = group[0];
    let scored: Vec<_> = group.iter().filter_map(|r| r.scores).collect();
    let mut counts = [0usize; 6];
    for r in group {
        counts[r.outcome.index()] += 1;
    }
    let percents = largest_remainder(&counts);
    let success = group.iter().filter(|r| r.outcome.is_success()).count();
    let n = group.len();
    ReportRow {
        model_id: first.model_id.clone(),
        scenario_id: first.scenario_id.clone(),
        records: n,
        scored_records: scored.len(),
        tasks: group.iter().map(|r| r.task_index).collect::<HashSet<_>>().len(),
        repetitions: group.iter().map(|r| r.repetition).collect::<HashSet<_>>().len(),
        mean_latency_s: round_half_up(mean(group.iter().map(|r| r.latency_ms / 1000.0)).unwrap_or(0.0), 2),
        mean_bleu: mean(scored.iter().map(|s| s.bleu)).map(|m| round_half_up(m, 2)),
        mean_meteor: mean(scored.iter().map(|s| s.meteor)).map(|m| round_half_up(m, 2)),
        mean_length_ratio: mean(scored.iter().map(|s| s.length_ratio)).map(|m| round_half_up(m, 0)),
        success_percent: round_half_up(100.0 * success as f64 / n as f64, 0) as u32,
        distribution: OutcomeCategory::ALL
            .iter()
            .map(|&c| CategoryShare {
                category: c,
                count: counts[c.index()],
                percent: percents[c.index()],
            })
            .collect(),
    }
}

pub fn aggregate(records: &[RunRecord]) -> Result<AggregateReport, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::NoRecords);
    }
    let mut scenarios: Vec<&str> = Vec::new();
    let mut groups: Vec<((&str, &str), Vec<&RunRecord>)> = Vec::new();
    for r in records {
        if !scenarios.contains(&r.scenario_id.as_str()) {
            scenarios.push(&r.scenario_id);
        }
        let key = (r.scenario_id.as_str(), r.model_id.as_str());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let mut rows = Vec::with_capacity(groups.len());
    for s in scenarios {
        rows.extend(groups.iter().filter(|((gs, _), _)| *gs == s).map(|(_, g)| row(g)));
    }
    Ok(AggregateReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Json,
    Csv,
}

fn md_cell(s: &str) -> String {
    s.replace('|', "\\|")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn fixed(v: Option<f64>, decimals: usize, suffix: &str) -> String {
    match v {
        Some(v) => format!("{v:.decimals$}{suffix}"),
        None => "n/a".into(),
    }
}

fn render_markdown(report: &AggregateReport) -> String {
    let mut out = String::new();
    let mut seen: Vec<&str> = Vec::new();
    for r in &report.rows {
        if seen.contains(&r.scenario_id.as_str()) {
            continue;
        }
        seen.push(&r.scenario_id);
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(out, "## Scenario {}\n", md_cell(&r.scenario_id));
        out.push_str("| Model | Time | BLEU | METEOR | Ratio | Success |\n");
        out.push_str("|:------|-----:|-----:|-------:|------:|--------:|\n");
        for row in report.rows.iter().filter(|x| x.scenario_id == r.scenario_id) {
            let _ = writeln!(
                out,
                "| {} | {:.2}s | {} | {} | {} | {}% |",
                md_cell(&row.model_id),
                row.mean_latency_s,
                fixed(row.mean_bleu, 2, ""),
                fixed(row.mean_meteor, 2, ""),
                fixed(row.mean_length_ratio, 0, "%"),
                row.success_percent
            );
        }
    }
    out
}

fn render_csv(report: &AggregateReport) -> String {
    let mut out = String::from("model,scenario,category,percent\n");
    for row in &report.rows {
        for share in &row.distribution {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                csv_field(&row.model_id),
                csv_field(&row.scenario_id),
                share.category,
                share.percent
            );
        }
    }
    out
}

pub fn render_report(report: &AggregateReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
    }
}
