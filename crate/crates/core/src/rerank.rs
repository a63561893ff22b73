//! Two-stage retrieval: BM25 candidates rescored by a pointwise scorer.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::corpus::{Corpus, Passage, Question};
use crate::lexical::InvertedIndex;
use crate::par::{self, Execution};
use crate::rank::score_cmp;
use crate::{Error, Result};

pub const DEFAULT_CANDIDATES: usize = 100;

/// Pointwise relevance model. Implementations must be deterministic.
pub trait Scorer: Sync {
    fn score(&self, question: &Question, passage: &Passage) -> Result<f64>;
}

/// Precomputed scores keyed by `(question id, passage id)`.
#[derive(Debug, Clone, Default)]
pub struct ExternalScores {
    scores: HashMap<(String, String), f64>,
}

impl ExternalScores {
    pub fn insert(&mut self, question: impl Into<String>, passage: impl Into<String>, score: f64) {
        self.scores.insert((question.into(), passage.into()), score);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Reads `question_id \t passage_id \t score` lines (no header).
    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let mut out = ExternalScores::default();
        for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: &str| Error::Parse {
                line: n + 1,
                message: m.to_string(),
            };
            let mut cols = line.split('\t');
            let (Some(q), Some(p), Some(s), None) =
                (cols.next(), cols.next(), cols.next(), cols.next())
            else {
                return Err(bad("expected 3 tab-separated columns"));
            };
            let score: f64 = s.trim().parse().map_err(|_| bad("score is not a number"))?;
            if !score.is_finite() {
                return Err(bad("score is not finite"));
            }
            out.insert(q, p, score);
        }
        Ok(out)
    }
}

impl Scorer for ExternalScores {
    fn score(&self, question: &Question, passage: &Passage) -> Result<f64> {
        self.scores
            .get(&(question.id.clone(), passage.id.clone()))
            .copied()
            .ok_or_else(|| Error::MissingScore {
                question: question.id.clone(),
                passage: passage.id.clone(),
            })
    }
}

/// Sum of BM25 IDF over the terms shared by question and passage.
#[derive(Debug, Clone, Copy)]
pub struct OverlapScorer<'a> {
    index: &'a InvertedIndex,
}

impl<'a> OverlapScorer<'a> {
    pub fn new(index: &'a InvertedIndex) -> Self {
        OverlapScorer { index }
    }
}

impl Scorer for OverlapScorer<'_> {
    fn score(&self, question: &Question, passage: &Passage) -> Result<f64> {
        let in_passage: HashSet<&str> = passage.tokens.iter().map(String::as_str).collect();
        Ok(crate::lexical::unique_terms(&question.tokens)
            .filter(|t| in_passage.contains(t))
            .map(|t| self.index.idf(t))
            .sum())
    }
}

/// Rescoring with BM25 itself; reranking with it reproduces the BM25 order.
#[derive(Debug, Clone, Copy)]
pub struct Bm25Scorer<'a> {
    index: &'a InvertedIndex,
}

impl<'a> Bm25Scorer<'a> {
    pub fn new(index: &'a InvertedIndex) -> Self {
        Bm25Scorer { index }
    }
}

impl Scorer for Bm25Scorer<'_> {
    fn score(&self, question: &Question, passage: &Passage) -> Result<f64> {
        self.index.bm25_score(&question.tokens, &passage.id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reranked {
    pub id: String,
    pub score: f64,
    pub bm25: f64,
}

/// Reranks the BM25 top-`k_candidates` by `scorer` and keeps `k_out`.
///
/// Order: scorer score descending, then BM25 score descending, then id ascending.
pub fn rerank(
    question: &Question,
    corpus: &Corpus,
    index: &InvertedIndex,
    scorer: &dyn Scorer,
    k_candidates: usize,
    k_out: usize,
    exec: Execution,
) -> Result<Vec<Reranked>> {
    if k_out == 0 || k_out > k_candidates {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k_out <= k_candidates, got k_out={k_out}, k_candidates={k_candidates}"
        )));
    }
    let candidates = index.search(&question.tokens, k_candidates)?;
    let mut out = par::try_map(exec, &candidates, |c| {
        let passage = corpus.require(&c.id)?;
        Ok(Reranked {
            id: c.id.clone(),
            score: scorer.score(question, passage)?,
            bm25: c.score,
        })
    })?;
    out.sort_unstable_by(|a, b| {
        score_cmp(b.score, a.score)
            .then_with(|| score_cmp(b.bm25, a.bm25))
            .then_with(|| a.id.cmp(&b.id))
    });
    out.truncate(k_out);
    Ok(out)
}
