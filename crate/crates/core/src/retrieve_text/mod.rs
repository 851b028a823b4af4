//! Lexical retrieval over text knowledge bases.
//!
//! Pages are cut into overlapping token windows that never cross a page
//! boundary, and windows are ranked against the subquery with BM25.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{KbKind, KnowledgeBase};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TextRetrievalError {
    #[error("chunk_tokens must exceed overlap_tokens and be at least 1 (got {chunk_tokens}, {overlap_tokens})")]
    BadChunkParams { chunk_tokens: usize, overlap_tokens: usize },
    #[error("BM25 parameters out of range (k1 = {k1}, b = {b})")]
    BadBm25Params { k1: f64, b: f64 },
    #[error("k must be at least 1")]
    BadK,
    #[error("document has no chunks")]
    NoChunks,
    #[error("knowledge base {kb_id} is a {kind} source, not text")]
    WrongKbKind { kb_id: String, kind: KbKind },
}

fn default_chunk_tokens() -> usize {
    200
}
fn default_overlap_tokens() -> usize {
    40
}
fn default_k() -> usize {
    3
}
fn default_k1() -> f64 {
    1.2
}
fn default_b() -> f64 {
    0.75
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    #[serde(default = "default_chunk_tokens")]
    pub chunk_tokens: usize,
    #[serde(default = "default_overlap_tokens")]
    pub overlap_tokens: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_k1")]
    pub k1: f64,
    #[serde(default = "default_b")]
    pub b: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            chunk_tokens: default_chunk_tokens(),
            overlap_tokens: default_overlap_tokens(),
            k: default_k(),
            k1: default_k1(),
            b: default_b(),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), TextRetrievalError> {
        check_chunk_params(self.chunk_tokens, self.overlap_tokens)?;
        check_bm25_params(self.k1, self.b)?;
        if self.k == 0 {
            return Err(TextRetrievalError::BadK);
        }
        Ok(())
    }
}

/// Page-local text window. `char_span` holds UTF-8 byte offsets into the
/// page, and `text` is exactly that slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub kb_id: String,
    /// 1-based.
    pub page: usize,
    pub char_span: (usize, usize),
    pub text: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk: Chunk,
    pub score: f64,
}

/// Byte spans of the maximal alphanumeric runs in `text`.
pub fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Lowercased alphanumeric runs. Shared with the metrics module.
pub fn tokenize(text: &str) -> Vec<String> {
    token_spans(text)
        .into_iter()
        .map(|(s, e)| text[s..e].to_lowercase())
        .collect()
}

fn check_chunk_params(chunk_tokens: usize, overlap_tokens: usize) -> Result<(), TextRetrievalError> {
    if chunk_tokens == 0 || overlap_tokens >= chunk_tokens {
        return Err(TextRetrievalError::BadChunkParams {
            chunk_tokens,
            overlap_tokens,
        });
    }
    Ok(())
}

fn check_bm25_params(k1: f64, b: f64) -> Result<(), TextRetrievalError> {
    if !(k1.is_finite() && k1 >= 0.0 && (0.0..=1.0).contains(&b)) {
        return Err(TextRetrievalError::BadBm25Params { k1, b });
    }
    Ok(())
}

/// Windows of `chunk_tokens` tokens advancing by `chunk_tokens - overlap_tokens`,
/// restarted on every page. A page that fits in one window yields exactly one
/// chunk; pages without tokens yield none.
///
/// Window spans are widened so that the chunks of a page tile it completely:
/// the first starts at offset 0, the last ends at the page end, and every other
/// window ends where the token after it begins.
pub fn chunk_document(
    kb_id: &str,
    pages: &[String],
    chunk_tokens: usize,
    overlap_tokens: usize,
) -> Result<Vec<Chunk>, TextRetrievalError> {
    check_chunk_params(chunk_tokens, overlap_tokens)?;
    let stride = chunk_tokens - overlap_tokens;
    let mut chunks = Vec::new();
    for (p, page) in pages.iter().enumerate() {
        let spans = token_spans(page);
        let n = spans.len();
        if n == 0 {
            continue;
        }
        let starts: Vec<usize> = if n <= chunk_tokens {
            vec![0]
        } else {
            (0..n).step_by(stride).collect()
        };
        for (w, &first) in starts.iter().enumerate() {
            let past = (first + chunk_tokens).min(n);
            let start = if w == 0 { 0 } else { spans[first].0 };
            let end = if w + 1 == starts.len() || past == n {
                page.len()
            } else {
                spans[past].0
            };
            chunks.push(Chunk {
                kb_id: kb_id.to_owned(),
                page: p + 1,
                char_span: (start, end),
                text: page[start..end].to_owned(),
                token_count: past - first,
            });
        }
    }
    Ok(chunks)
}

/// Orders scored chunks by descending score, then page, then span start.
pub fn rank_order(a: &ScoredChunk, b: &ScoredChunk) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.chunk.page.cmp(&b.chunk.page))
        .then(a.chunk.char_span.0.cmp(&b.chunk.char_span.0))
}

/// Okapi BM25 with IDF `ln((N - df + 0.5) / (df + 0.5) + 1)`. Every query
/// token contributes, repeats included.
pub fn bm25_scores(
    query_tokens: &[String],
    chunks: &[Chunk],
    k1: f64,
    b: f64,
) -> Result<Vec<ScoredChunk>, TextRetrievalError> {
    if chunks.is_empty() {
        return Err(TextRetrievalError::NoChunks);
    }
    check_bm25_params(k1, b)?;
    let term_freqs: Vec<HashMap<String, usize>> = chunks
        .iter()
        .map(|c| {
            let mut tf = HashMap::new();
            for t in tokenize(&c.text) {
                *tf.entry(t).or_insert(0) += 1;
            }
            tf
        })
        .collect();
    let n = chunks.len() as f64;
    let avgdl = chunks.iter().map(|c| c.token_count as f64).sum::<f64>() / n;
    let mut idf = HashMap::new();
    for q in query_tokens {
        idf.entry(q.as_str()).or_insert_with(|| {
            let df = term_freqs.iter().filter(|tf| tf.contains_key(q)).count() as f64;
            ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
        });
    }
    let mut scored: Vec<ScoredChunk> = chunks
        .iter()
        .zip(&term_freqs)
        .map(|(chunk, tf)| {
            let dl = chunk.token_count as f64;
            let norm = if avgdl > 0.0 { dl / avgdl } else { 0.0 };
            let score = query_tokens
                .iter()
                .map(|q| {
                    let f = tf.get(q).copied().unwrap_or(0) as f64;
                    if f == 0.0 {
                        0.0
                    } else {
                        idf[q.as_str()] * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * norm))
                    }
                })
                .sum();
            ScoredChunk {
                chunk: chunk.clone(),
                score,
            }
        })
        .collect();
    scored.sort_by(rank_order);
    Ok(scored)
}

/// Top `config.k` chunks of a text knowledge base for `subquery`.
pub fn retrieve_text(
    subquery: &str,
    kb: &KnowledgeBase,
    config: &RetrievalConfig,
) -> Result<Vec<ScoredChunk>, TextRetrievalError> {
    config.validate()?;
    let doc = kb.as_text().ok_or_else(|| TextRetrievalError::WrongKbKind {
        kb_id: kb.id().to_owned(),
        kind: kb.kind(),
    })?;
    let chunks = chunk_document(kb.id(), &doc.pages, config.chunk_tokens, config.overlap_tokens)?;
    let mut ranked = bm25_scores(&tokenize(subquery), &chunks, config.k1, config.b)?;
    ranked.truncate(config.k);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::KbKind;
    use crate::retrieve_table::parse_csv_table;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(toks("Replace the O-ring."), ["replace", "the", "o", "ring"]);
        assert!(toks("").is_empty());
        assert_eq!(toks("ABC abc"), ["abc", "abc"]);
        assert_eq!(toks("F-200: 14 units"), ["f", "200", "14", "units"]);
    }

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn window_starts() {
        let chunks = chunk_document("m", &[words(100)], 40, 10).unwrap();
        let starts: Vec<String> = chunks.iter().map(|c| toks(&c.text)[0].clone()).collect();
        assert_eq!(starts, ["w0", "w30", "w60", "w90"]);
        let counts: Vec<usize> = chunks.iter().map(|c| c.token_count).collect();
        assert_eq!(counts, [40, 40, 40, 10]);
    }

    #[test]
    fn short_page_single_chunk() {
        let chunks = chunk_document("m", &[words(5)], 40, 10).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].token_count, 5);
        let chunks = chunk_document("m", &[words(35)], 40, 10).unwrap();
        assert_eq!(chunks.len(), 1);
    }

    #[test]
    fn bad_params() {
        assert!(matches!(
            chunk_document("m", &[words(5)], 40, 40),
            Err(TextRetrievalError::BadChunkParams { .. })
        ));
        assert!(chunk_document("m", &[words(5)], 0, 0).is_err());
    }

    #[test]
    fn pages_are_not_crossed() {
        let pages = vec!["alpha beta".to_owned(), "  ".to_owned(), "gamma".to_owned()];
        let chunks = chunk_document("m", &pages, 200, 40).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!((chunks[0].page, chunks[1].page), (1, 3));
        assert_eq!(chunks[1].text, "gamma");
    }

    fn chunk(text: &str, page: usize) -> Chunk {
        Chunk {
            kb_id: "m".into(),
            page,
            char_span: (0, text.len()),
            text: text.into(),
            token_count: toks(text).len(),
        }
    }

    #[test]
    fn absent_term_scores_zero() {
        let s = bm25_scores(&toks("zeta"), &[chunk("a b", 1), chunk("c", 2)], 1.2, 0.75).unwrap();
        assert!(s.iter().all(|c| c.score == 0.0));
        assert_eq!(s[0].chunk.page, 1);
    }

    #[test]
    fn single_chunk_hand_value() {
        // N = 1, df = 1: idf = ln(0.5/1.5 + 1) = ln(4/3); tf = 1, dl = avgdl
        // so each term scores idf * 2.2 / 2.2.
        let s = bm25_scores(&toks("torque spec"), &[chunk("torque spec", 1)], 1.2, 0.75).unwrap();
        assert!((s[0].score - 2.0 * (4.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn two_chunk_ranking() {
        // N = 2, df = 1: idf = ln(1.5/1.5 + 1) = ln 2; avgdl = 2, dl = 2.
        let s = bm25_scores(
            &toks("filter"),
            &[chunk("oil pump", 1), chunk("oil filter", 2)],
            1.2,
            0.75,
        )
        .unwrap();
        assert_eq!(s[0].chunk.page, 2);
        assert!((s[0].score - 2.0f64.ln()).abs() < 1e-12);
        assert_eq!(s[1].score, 0.0);
    }

    #[test]
    fn no_chunks() {
        assert_eq!(
            bm25_scores(&toks("a"), &[], 1.2, 0.75).unwrap_err(),
            TextRetrievalError::NoChunks
        );
    }

    #[test]
    fn top_k_selection() {
        let text: String = (0..10)
            .map(|i| format!("page {i} filter {}", "x ".repeat(i)))
            .collect::<Vec<_>>()
            .join("\u{c}");
        let kb = KnowledgeBase::text("manual", "", &text);
        let r = retrieve_text("filter", &kb, &RetrievalConfig::default()).unwrap();
        assert_eq!(r.len(), 3);
        assert!(r.windows(2).all(|w| w[0].score >= w[1].score));

        let kb = KnowledgeBase::text("manual", "", "one\u{c}two");
        assert_eq!(retrieve_text("one", &kb, &RetrievalConfig::default()).unwrap().len(), 2);

        let kb = KnowledgeBase::text("manual", "", " \u{c} ");
        assert_eq!(
            retrieve_text("one", &kb, &RetrievalConfig::default()).unwrap_err(),
            TextRetrievalError::NoChunks
        );
    }

    #[test]
    fn table_kb_rejected() {
        let t = parse_csv_table("a\n1\n", "inv").unwrap();
        let kb = KnowledgeBase::table("", t);
        assert_eq!(
            retrieve_text("x", &kb, &RetrievalConfig::default()).unwrap_err(),
            TextRetrievalError::WrongKbKind {
                kb_id: "inv".into(),
                kind: KbKind::Table
            }
        );
    }
}
