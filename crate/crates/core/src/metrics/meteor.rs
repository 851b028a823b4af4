//! METEOR with staged unigram alignment.
//!
//! Each candidate/reference token pair is classified by the first stage that
//! links it: exact surface match, equal Porter stems, or a synonym-table
//! entry. The chosen alignment is one-to-one and maximises
//! (exact, stem, synonym) match counts lexicographically, then minimises the
//! number of chunks.
//!
//! Match counts alone are always maximised by a stage-by-stage greedy pass.
//! Chunk minimisation is exact for candidates of up to [`EXACT_SEARCH_MAX_CAND`]
//! tokens and falls back to the greedy alignment above that, when more than
//! 128 reference positions are matchable, or when the search exceeds
//! [`EXACT_SEARCH_STATE_BUDGET`] memoised states.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use super::porter::porter_stem;
use super::MetricError;
use crate::retrieve_text::tokenize;

pub const EXACT_SEARCH_MAX_CAND: usize = 20;
pub const EXACT_SEARCH_STATE_BUDGET: usize = 2_000_000;

/// Symmetric synonym relation over lowercase tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymTable {
    pairs: HashSet<(String, String)>,
}

impl SynonymTable {
    /// Parses a JSON object mapping each token to a list of synonyms.
    pub fn from_json(text: &str) -> Result<Self, MetricError> {
        let map: HashMap<String, Vec<String>> =
            serde_json::from_str(text).map_err(|e| MetricError::BadSynonymTable(e.to_string()))?;
        let mut table = Self::default();
        for (word, synonyms) in map {
            for s in synonyms {
                table.add(&word, &s);
            }
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, MetricError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MetricError::BadSynonymTable(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn add(&mut self, a: &str, b: &str) {
        let (a, b) = (a.to_lowercase(), b.to_lowercase());
        self.pairs.insert((b.clone(), a.clone()));
        self.pairs.insert((a, b));
    }

    pub fn related(&self, a: &str, b: &str) -> bool {
        self.pairs.contains(&(a.to_owned(), b.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MatchStage {
    Exact = 0,
    Stem = 1,
    Synonym = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignmentStats {
    pub matches: usize,
    pub chunks: usize,
    pub by_stage: [usize; 3],
}

/// Pairwise stage table: `stage[i][j]` is the first stage linking candidate
/// token `i` to reference token `j`.
pub fn stage_table(
    cand: &[String],
    reference: &[String],
    synonyms: Option<&SynonymTable>,
) -> Vec<Vec<Option<MatchStage>>> {
    let cand_stems: Vec<String> = cand.iter().map(|t| porter_stem(t)).collect();
    let ref_stems: Vec<String> = reference.iter().map(|t| porter_stem(t)).collect();
    cand.iter()
        .enumerate()
        .map(|(i, c)| {
            reference
                .iter()
                .enumerate()
                .map(|(j, r)| {
                    if c == r {
                        Some(MatchStage::Exact)
                    } else if cand_stems[i] == ref_stems[j] {
                        Some(MatchStage::Stem)
                    } else if synonyms.is_some_and(|s| s.related(c, r)) {
                        Some(MatchStage::Synonym)
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect()
}

fn chunk_count(alignment: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for &a in alignment {
        if let Some(j) = a {
            if !prev.is_some_and(|p| p + 1 == j) {
                chunks += 1;
            }
        }
        prev = a;
    }
    chunks
}

fn stats_of(alignment: &[Option<usize>], stages: &[Vec<Option<MatchStage>>]) -> AlignmentStats {
    let mut by_stage = [0; 3];
    for (i, a) in alignment.iter().enumerate() {
        if let Some(j) = *a {
            by_stage[stages[i][j].expect("aligned pairs are linked") as usize] += 1;
        }
    }
    AlignmentStats {
        matches: by_stage.iter().sum(),
        chunks: chunk_count(alignment),
        by_stage,
    }
}

/// Stage-by-stage left-to-right alignment. Within a stage each candidate
/// token takes the reference position right after its predecessor's match
/// when that is free, otherwise the leftmost free position.
pub fn greedy_alignment(stages: &[Vec<Option<MatchStage>>], ref_len: usize) -> Vec<Option<usize>> {
    let mut alignment: Vec<Option<usize>> = vec![None; stages.len()];
    let mut used = vec![false; ref_len];
    for stage in [MatchStage::Exact, MatchStage::Stem, MatchStage::Synonym] {
        for i in 0..stages.len() {
            if alignment[i].is_some() {
                continue;
            }
            let ok = |j: usize| !used[j] && stages[i][j] == Some(stage);
            let follow = i
                .checked_sub(1)
                .and_then(|p| alignment[p])
                .map(|j| j + 1)
                .filter(|&j| j < ref_len && ok(j));
            if let Some(j) = follow.or_else(|| (0..ref_len).find(|&j| ok(j))) {
                alignment[i] = Some(j);
                used[j] = true;
            }
        }
    }
    alignment
}

/// Lexicographic objective: stage counts, then continuations (m - chunks).
type Score = (u16, u16, u16, u16);

fn add(a: Score, b: Score) -> Score {
    (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3)
}

struct Search<'a> {
    links: Vec<Vec<(usize, MatchStage)>>,
    bit: &'a HashMap<usize, u32>,
    memo: HashMap<(usize, Option<usize>, u128), Score>,
}

impl Search<'_> {
    fn best(&mut self, i: usize, prev: Option<usize>, used: u128) -> Option<Score> {
        if i == self.links.len() {
            return Some((0, 0, 0, 0));
        }
        if let Some(&s) = self.memo.get(&(i, prev, used)) {
            return Some(s);
        }
        if self.memo.len() >= EXACT_SEARCH_STATE_BUDGET {
            return None;
        }
        let mut best = self.best(i + 1, None, used)?;
        for k in 0..self.links[i].len() {
            let (j, stage) = self.links[i][k];
            let b = 1u128 << self.bit[&j];
            if used & b != 0 {
                continue;
            }
            let mut gain: Score = (0, 0, 0, 0);
            match stage {
                MatchStage::Exact => gain.0 = 1,
                MatchStage::Stem => gain.1 = 1,
                MatchStage::Synonym => gain.2 = 1,
            }
            if prev.is_some_and(|p| p + 1 == j) {
                gain.3 = 1;
            }
            let rest = self.best(i + 1, Some(j), used | b)?;
            best = best.max(add(gain, rest));
        }
        self.memo.insert((i, prev, used), best);
        Some(best)
    }
}

fn upper_bound(stages: &[Vec<Option<MatchStage>>], cand: &[String], reference: &[String]) -> Score {
    fn min_overlap<'a>(a: impl Iterator<Item = &'a str>, b: impl Iterator<Item = &'a str>) -> usize {
        let mut ca: HashMap<&str, usize> = HashMap::new();
        for t in a {
            *ca.entry(t).or_insert(0) += 1;
        }
        let mut cb: HashMap<&str, usize> = HashMap::new();
        for t in b {
            *cb.entry(t).or_insert(0) += 1;
        }
        ca.iter().map(|(t, n)| (*n).min(cb.get(t).copied().unwrap_or(0))).sum()
    }
    let exact = min_overlap(cand.iter().map(String::as_str), reference.iter().map(String::as_str));
    let cs: Vec<String> = cand.iter().map(|t| porter_stem(t)).collect();
    let rs: Vec<String> = reference.iter().map(|t| porter_stem(t)).collect();
    let stem = min_overlap(cs.iter().map(String::as_str), rs.iter().map(String::as_str));
    let linked_cand = stages.iter().filter(|row| row.iter().any(Option::is_some)).count();
    let linked_ref = (0..reference.len())
        .filter(|&j| stages.iter().any(|row| row[j].is_some()))
        .count();
    let total = linked_cand.min(linked_ref).max(stem);
    (
        exact as u16,
        (stem - exact) as u16,
        (total - stem) as u16,
        total.saturating_sub(1) as u16,
    )
}

/// Best alignment under the objective described in the module docs.
pub fn align(cand: &[String], reference: &[String], synonyms: Option<&SynonymTable>) -> AlignmentStats {
    let stages = stage_table(cand, reference, synonyms);
    let greedy = stats_of(&greedy_alignment(&stages, reference.len()), &stages);
    let score_of = |s: &AlignmentStats| -> Score {
        (
            s.by_stage[0] as u16,
            s.by_stage[1] as u16,
            s.by_stage[2] as u16,
            (s.matches - s.chunks) as u16,
        )
    };
    if score_of(&greedy) == upper_bound(&stages, cand, reference) || cand.len() > EXACT_SEARCH_MAX_CAND {
        return greedy;
    }
    let relevant: Vec<usize> = (0..reference.len())
        .filter(|&j| stages.iter().any(|row| row[j].is_some()))
        .collect();
    if relevant.len() > 128 {
        return greedy;
    }
    let bit: HashMap<usize, u32> = relevant.iter().enumerate().map(|(b, &j)| (j, b as u32)).collect();
    let links = stages
        .iter()
        .map(|row| row.iter().enumerate().filter_map(|(j, s)| s.map(|s| (j, s))).collect())
        .collect();
    let mut search = Search {
        links,
        bit: &bit,
        memo: HashMap::new(),
    };
    match search.best(0, None, 0) {
        Some(best) if best > score_of(&greedy) => {
            let matches = (best.0 + best.1 + best.2) as usize;
            AlignmentStats {
                matches,
                chunks: matches - best.3 as usize,
                by_stage: [best.0 as usize, best.1 as usize, best.2 as usize],
            }
        }
        _ => greedy,
    }
}

/// METEOR from match and chunk counts: `Fmean * (1 - 0.5 (chunks/m)^3)`.
pub fn meteor_from_counts(matches: usize, chunks: usize, cand_len: usize, ref_len: usize) -> f64 {
    if matches == 0 {
        return 0.0;
    }
    let m = matches as f64;
    let p = m / cand_len as f64;
    let r = m / ref_len as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    (fmean * (1.0 - penalty)).clamp(0.0, 1.0)
}

pub fn meteor(candidate: &str, reference: &str, synonyms: Option<&SynonymTable>) -> Result<f64, MetricError> {
    let reference = tokenize(reference);
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let cand = tokenize(candidate);
    let stats = align(&cand, &reference, synonyms);
    Ok(meteor_from_counts(
        stats.matches,
        stats.chunks,
        cand.len(),
        reference.len(),
    ))
}
