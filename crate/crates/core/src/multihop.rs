//! Two-hop retrieval: dense beam search, hybrid rerank-then-dense, and the
//! single-hop baselines behind one method switch.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::corpus::{Corpus, Question};
use crate::dense::DenseIndex;
use crate::encoder::QueryEncoder;
use crate::lexical::InvertedIndex;
use crate::par::{self, Execution};
use crate::rank::{score_cmp, Ranked};
use crate::rerank::{rerank, Scorer, DEFAULT_CANDIDATES};
use crate::{Error, Result};

/// One hypothesis of the beam: a passage per hop and the per-hop scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathCandidate {
    pub hop_passages: Vec<String>,
    pub hop_scores: Vec<f64>,
    pub total_score: f64,
}

impl PathCandidate {
    pub fn new(hop_passages: Vec<String>, hop_scores: Vec<f64>) -> Self {
        let total_score = hop_scores.iter().sum();
        PathCandidate {
            hop_passages,
            hop_scores,
            total_score,
        }
    }
}

fn sort_paths_by_ids(paths: &mut [PathCandidate]) {
    paths.sort_unstable_by(|a, b| {
        score_cmp(b.total_score, a.total_score).then_with(|| a.hop_passages.cmp(&b.hop_passages))
    });
}

/// Iterative dense beam search.
///
/// Hop 1 searches with `h(q)`; each of the `beam` hop-1 passages `p₁` is then
/// appended to the question to search hop 2 with `h(q, p₁)`, excluding `p₁`.
/// Paths are scored by the sum of the two inner products and the best
/// `k_paths` are returned.
pub fn mdr_retrieve(
    question: &Question,
    beam: usize,
    k_paths: usize,
    encoder: &dyn QueryEncoder,
    corpus: &Corpus,
    index: &DenseIndex,
) -> Result<Vec<PathCandidate>> {
    if index.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if beam == 0 || k_paths == 0 || k_paths > beam.saturating_mul(beam) {
        return Err(Error::InvalidArgument(format!(
            "need beam >= 1 and 1 <= k_paths <= beam^2, got beam={beam}, k_paths={k_paths}"
        )));
    }
    let hop1 = index.search(
        &encoder.encode_query(question, None)?,
        beam,
        &HashSet::new(),
    )?;
    let mut paths = Vec::with_capacity(hop1.len() * beam);
    for first in &hop1 {
        let prev = corpus.require(&first.id)?;
        let exclude: HashSet<String> = [first.id.clone()].into();
        let hop2 = index.search(&encoder.encode_query(question, Some(prev))?, beam, &exclude)?;
        for second in hop2 {
            paths.push(PathCandidate::new(
                vec![first.id.clone(), second.id],
                vec![first.score, second.score],
            ));
        }
    }
    sort_paths_by_ids(&mut paths);
    paths.truncate(k_paths);
    Ok(paths)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HybridConfig {
    pub b1: usize,
    pub b2: usize,
    pub k_candidates: usize,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            b1: 10,
            b2: 10,
            k_candidates: DEFAULT_CANDIDATES,
        }
    }
}

/// Maps scores to `[0, 1]` by min-max; all-equal inputs map to 1.0.
pub fn min_max(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
    } else {
        vec![1.0; scores.len()]
    }
}

/// Reranked lexical first hop followed by a dense second hop.
///
/// Hop 1 reranks the BM25 top-`k_candidates` and keeps `b1`. For each hop-1
/// passage, hop 2 searches the dense index with `h(q, p₁)` (top `b2`,
/// excluding `p₁`). Hop-1 scorer scores are min-max normalized over the `b1`
/// candidates, hop-2 inner products over all hop-2 hits; a path scores the
/// sum. Ties go to the better hop-1 rank, then the smaller hop-2 id.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_retrieve(
    question: &Question,
    config: HybridConfig,
    scorer: &dyn Scorer,
    encoder: &dyn QueryEncoder,
    corpus: &Corpus,
    dense: &DenseIndex,
    lexical: &InvertedIndex,
) -> Result<Vec<PathCandidate>> {
    if config.b1 == 0 || config.b2 == 0 {
        return Err(Error::InvalidArgument(
            "b1 and b2 must be at least 1".into(),
        ));
    }
    let hop1 = rerank(
        question,
        corpus,
        lexical,
        scorer,
        config.k_candidates,
        config.b1,
        Execution::Sequential,
    )?;
    if hop1.is_empty() {
        return Ok(Vec::new());
    }
    let z1 = min_max(&hop1.iter().map(|r| r.score).collect::<Vec<_>>());

    let mut hop2: Vec<Vec<Ranked>> = Vec::with_capacity(hop1.len());
    for first in &hop1 {
        let prev = corpus.require(&first.id)?;
        let exclude: HashSet<String> = [first.id.clone()].into();
        hop2.push(dense.search(
            &encoder.encode_query(question, Some(prev))?,
            config.b2,
            &exclude,
        )?);
    }
    let z2 = min_max(&hop2.iter().flatten().map(|r| r.score).collect::<Vec<_>>());

    let mut paths = Vec::new();
    let mut z2 = z2.into_iter();
    for (rank, (first, seconds)) in hop1.iter().zip(&hop2).enumerate() {
        for second in seconds {
            let z = z2.next().expect("one normalized score per hop-2 hit");
            let path =
                PathCandidate::new(vec![first.id.clone(), second.id.clone()], vec![z1[rank], z]);
            paths.push((rank, path));
        }
    }
    paths.sort_by(|(ra, a), (rb, b)| {
        score_cmp(b.total_score, a.total_score)
            .then(ra.cmp(rb))
            .then_with(|| a.hop_passages[1].cmp(&b.hop_passages[1]))
    });
    Ok(paths.into_iter().map(|(_, p)| p).collect())
}

/// Emits hop-1 then hop-2 ids of each path in rank order, skipping repeats,
/// truncated to `k`.
pub fn flatten_paths(paths: &[PathCandidate], k: usize) -> Vec<String> {
    flatten_scored(paths, k).into_iter().map(|r| r.id).collect()
}

/// Like [`flatten_paths`]; each passage carries the score of the path that first emitted it.
pub fn flatten_scored(paths: &[PathCandidate], k: usize) -> Vec<Ranked> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for path in paths {
        for id in &path.hop_passages {
            if out.len() == k {
                return out;
            }
            if seen.insert(id.as_str()) {
                out.push(Ranked::new(id.clone(), path.total_score));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Bm25,
    Rerank,
    Dpr,
    Mdr,
    Hybrid,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Bm25,
        Method::Rerank,
        Method::Dpr,
        Method::Mdr,
        Method::Hybrid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bm25 => "bm25",
            Method::Rerank => "rerank",
            Method::Dpr => "dpr",
            Method::Mdr => "mdr",
            Method::Hybrid => "hybrid",
        }
    }

    pub fn is_multi_hop(self) -> bool {
        matches!(self, Method::Mdr | Method::Hybrid)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetrievalParams {
    /// Passages kept per question in the output ranking.
    pub k: usize,
    /// Beam width for dense beam search.
    pub beam: usize,
    pub hybrid: HybridConfig,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        RetrievalParams {
            k: 20,
            beam: 10,
            hybrid: HybridConfig::default(),
        }
    }
}

/// Everything a method may need. Components a method does not use may be `None`.
#[derive(Clone, Copy)]
pub struct Retriever<'a> {
    pub corpus: &'a Corpus,
    pub lexical: Option<&'a InvertedIndex>,
    pub dense: Option<&'a DenseIndex>,
    pub encoder: Option<&'a dyn QueryEncoder>,
    pub scorer: Option<&'a dyn Scorer>,
    pub params: RetrievalParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionResult {
    pub question_id: String,
    pub ranking: Vec<Ranked>,
    /// Empty for single-hop methods.
    pub paths: Vec<PathCandidate>,
}

impl<'a> Retriever<'a> {
    fn need<T: ?Sized>(&self, part: Option<&'a T>, what: &str, method: Method) -> Result<&'a T> {
        part.ok_or_else(|| Error::InvalidArgument(format!("method {method} needs {what}")))
    }

    /// Fails early if `method` lacks a component or a parameter is out of range.
    pub fn check(&self, method: Method) -> Result<()> {
        let p = self.params;
        if p.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        match method {
            Method::Bm25 => {
                self.need(self.lexical, "a lexical index", method)?;
            }
            Method::Rerank => {
                self.need(self.lexical, "a lexical index", method)?;
                self.need(self.scorer, "a scorer", method)?;
                if p.k > p.hybrid.k_candidates {
                    return Err(Error::InvalidArgument(
                        "k must not exceed k_candidates for rerank".into(),
                    ));
                }
            }
            Method::Dpr | Method::Mdr => {
                let dense = self.need(self.dense, "a dense index", method)?;
                let enc = self.need(self.encoder, "a query encoder", method)?;
                if dense.dim() != enc.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: dense.dim(),
                        got: enc.dim(),
                    });
                }
                if method == Method::Mdr && p.beam == 0 {
                    return Err(Error::InvalidArgument("beam must be at least 1".into()));
                }
            }
            Method::Hybrid => {
                self.need(self.lexical, "a lexical index", method)?;
                self.need(self.scorer, "a scorer", method)?;
                let dense = self.need(self.dense, "a dense index", method)?;
                let enc = self.need(self.encoder, "a query encoder", method)?;
                if dense.dim() != enc.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: dense.dim(),
                        got: enc.dim(),
                    });
                }
                let h = p.hybrid;
                if h.b1 == 0 || h.b2 == 0 || h.b1 > h.k_candidates {
                    return Err(Error::InvalidArgument(format!(
                        "need 1 <= b1 <= k_candidates and b2 >= 1, got b1={}, b2={}, k_candidates={}",
                        h.b1, h.b2, h.k_candidates
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn retrieve(&self, method: Method, question: &Question) -> Result<QuestionResult> {
        let p = self.params;
        let (ranking, paths) = match method {
            Method::Bm25 => {
                let lexical = self.need(self.lexical, "a lexical index", method)?;
                (lexical.search(&question.tokens, p.k)?, Vec::new())
            }
            Method::Rerank => {
                let lexical = self.need(self.lexical, "a lexical index", method)?;
                let scorer = self.need(self.scorer, "a scorer", method)?;
                let hits = rerank(
                    question,
                    self.corpus,
                    lexical,
                    scorer,
                    p.hybrid.k_candidates,
                    p.k,
                    Execution::Sequential,
                )?;
                (
                    hits.into_iter()
                        .map(|r| Ranked::new(r.id, r.score))
                        .collect(),
                    Vec::new(),
                )
            }
            Method::Dpr => {
                let dense = self.need(self.dense, "a dense index", method)?;
                let enc = self.need(self.encoder, "a query encoder", method)?;
                (
                    dense.search(&enc.encode_query(question, None)?, p.k, &HashSet::new())?,
                    Vec::new(),
                )
            }
            Method::Mdr => {
                let dense = self.need(self.dense, "a dense index", method)?;
                let enc = self.need(self.encoder, "a query encoder", method)?;
                let paths =
                    mdr_retrieve(question, p.beam, p.beam * p.beam, enc, self.corpus, dense)?;
                (flatten_scored(&paths, p.k), paths)
            }
            Method::Hybrid => {
                let paths = hybrid_retrieve(
                    question,
                    p.hybrid,
                    self.need(self.scorer, "a scorer", method)?,
                    self.need(self.encoder, "a query encoder", method)?,
                    self.corpus,
                    self.need(self.dense, "a dense index", method)?,
                    self.need(self.lexical, "a lexical index", method)?,
                )?;
                (flatten_scored(&paths, p.k), paths)
            }
        };
        Ok(QuestionResult {
            question_id: question.id.clone(),
            ranking,
            paths,
        })
    }

    /// Retrieves for every question; output follows `questions` order.
    pub fn run(
        &self,
        method: Method,
        questions: &[Question],
        exec: Execution,
    ) -> Result<Vec<QuestionResult>> {
        self.check(method)?;
        par::try_map(exec, questions, |q| self.retrieve(method, q))
    }
}

/// Writes `question_id \t passage_id \t rank \t score \t run_tag` lines, ranks from 1.
pub fn write_run(w: &mut impl Write, results: &[QuestionResult], tag: &str) -> Result<()> {
    for r in results {
        for (i, hit) in r.ranking.iter().enumerate() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                r.question_id,
                hit.id,
                i + 1,
                hit.score,
                tag
            )?;
        }
    }
    Ok(())
}

pub fn save_run(path: impl AsRef<Path>, results: &[QuestionResult], tag: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_run(&mut w, results, tag)?;
    w.flush()?;
    Ok(())
}

/// One JSON object per question with its scored paths.
pub fn save_paths(path: impl AsRef<Path>, results: &[QuestionResult]) -> Result<()> {
    #[derive(Serialize)]
    struct Dump<'a> {
        question_id: &'a str,
        paths: &'a [PathCandidate],
    }
    let mut w = BufWriter::new(File::create(path)?);
    for r in results {
        serde_json::to_writer(
            &mut w,
            &Dump {
                question_id: &r.question_id,
                paths: &r.paths,
            },
        )
        .map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Passage, QuestionType};
    use crate::encoder::{hop_key, EmbeddingMatrix, PrecomputedQueries};
    use crate::rerank::ExternalScores;

    fn path(a: &str, b: &str, s: f64) -> PathCandidate {
        PathCandidate::new(vec![a.into(), b.into()], vec![s, 0.0])
    }

    #[test]
    fn flatten_examples() {
        assert_eq!(
            flatten_paths(&[path("A", "B", 2.0), path("A", "C", 1.0)], 3),
            ["A", "B", "C"]
        );
        assert_eq!(flatten_paths(&[path("A", "B", 1.0)], 10), ["A", "B"]);
        assert_eq!(
            flatten_paths(&[path("A", "B", 2.0), path("C", "A", 1.0)], 4),
            ["A", "B", "C"]
        );
        assert_eq!(
            flatten_paths(&[path("A", "B", 2.0), path("C", "D", 1.0)], 3),
            ["A", "B", "C"]
        );
    }

    #[test]
    fn min_max_degenerate() {
        assert_eq!(min_max(&[3.0, 3.0]), vec![1.0, 1.0]);
        assert_eq!(min_max(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.5]);
        assert!(min_max(&[]).is_empty());
    }

    /// Corpus of four one-word passages with a hand-set 2-d embedding matrix
    /// and precomputed hop queries.
    fn hand_built() -> (
        Corpus,
        InvertedIndex,
        DenseIndex,
        PrecomputedQueries,
        ExternalScores,
        Question,
    ) {
        let corpus = Corpus::from_passages(vec![
            Passage::new("A", "", "shared alpha"),
            Passage::new("B", "", "shared beta"),
            Passage::new("C", "", "gamma"),
            Passage::new("D", "", "delta"),
        ])
        .unwrap();
        let lexical = InvertedIndex::build(&corpus).unwrap();
        let dense = DenseIndex::new(
            EmbeddingMatrix::new(
                2,
                vec!["A".into(), "B".into(), "C".into(), "D".into()],
                vec![1.0, 0.0, 0.0, 1.0, 2.0, 1.0, 1.0, 3.0],
            )
            .unwrap(),
        );
        let queries = PrecomputedQueries::new(
            EmbeddingMatrix::new(
                2,
                vec!["q".into(), hop_key("q", "A"), hop_key("q", "B")],
                vec![1.0, 1.0, 1.0, 0.0, 0.0, 1.0],
            )
            .unwrap(),
        );
        let mut ext = ExternalScores::default();
        ext.insert("q", "A", 0.8);
        ext.insert("q", "B", 0.2);
        let q = Question::new("q", "shared", QuestionType::Bridge, "A", "C");
        (corpus, lexical, dense, queries, ext, q)
    }

    #[test]
    fn hybrid_hand_computed_ranking() {
        let (corpus, lexical, dense, queries, ext, q) = hand_built();
        let cfg = HybridConfig {
            b1: 2,
            b2: 2,
            k_candidates: 100,
        };
        let paths = hybrid_retrieve(&q, cfg, &ext, &queries, &corpus, &dense, &lexical).unwrap();
        // z1: A -> 1, B -> 0.
        // hop 2 from A, query (1,0), excluding A: C=2, D=1 (B=0 dropped at b2=2).
        // hop 2 from B, query (0,1), excluding B: D=3, C=1.
        // hop-2 scores {2,1,3,1}: min 1, max 3 -> C|A=0.5, D|A=0, D|B=1, C|B=0.
        // totals: (A,C)=1.5, (A,D)=1.0, (B,D)=1.0, (B,C)=0.0; tie broken by hop-1 rank.
        let got: Vec<(String, String, f64)> = paths
            .iter()
            .map(|p| {
                (
                    p.hop_passages[0].clone(),
                    p.hop_passages[1].clone(),
                    p.total_score,
                )
            })
            .collect();
        let want = [
            ("A", "C", 1.5),
            ("A", "D", 1.0),
            ("B", "D", 1.0),
            ("B", "C", 0.0),
        ];
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            assert_eq!((g.0.as_str(), g.1.as_str(), g.2), w);
        }
    }

    #[test]
    fn hybrid_single_first_hop_and_flat_scores() {
        let (corpus, lexical, dense, queries, mut ext, q) = hand_built();
        let cfg = HybridConfig {
            b1: 1,
            b2: 3,
            k_candidates: 100,
        };
        let paths = hybrid_retrieve(&q, cfg, &ext, &queries, &corpus, &dense, &lexical).unwrap();
        assert!(paths.iter().all(|p| p.hop_passages[0] == "A"));
        let seconds: Vec<_> = paths.iter().map(|p| p.hop_passages[1].as_str()).collect();
        assert_eq!(seconds, ["C", "D", "B"]);

        ext.insert("q", "B", 0.8);
        let cfg = HybridConfig {
            b1: 2,
            b2: 2,
            k_candidates: 100,
        };
        let paths = hybrid_retrieve(&q, cfg, &ext, &queries, &corpus, &dense, &lexical).unwrap();
        assert!(paths.iter().all(|p| p.hop_scores[0] == 1.0));
        let order: Vec<_> = paths.iter().map(|p| p.hop_scores[1]).collect();
        assert!(order.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn mdr_greedy_with_unit_beam() {
        let (corpus, _, dense, _, _, q) = hand_built();
        let queries = PrecomputedQueries::new(
            EmbeddingMatrix::new(
                2,
                vec!["q".into(), hop_key("q", "D")],
                vec![1.0, 1.0, 1.0, 0.0],
            )
            .unwrap(),
        );
        // hop 1: (1,1) scores A=1 B=1 C=3 D=4; hop 2 from D: (1,0) scores A=1 B=0 C=2.
        let paths = mdr_retrieve(&q, 1, 1, &queries, &corpus, &dense).unwrap();
        assert_eq!(
            paths,
            vec![PathCandidate::new(
                vec!["D".into(), "C".into()],
                vec![4.0, 2.0]
            )]
        );
        assert_eq!(paths[0].total_score, 6.0);
    }

    #[test]
    fn mdr_rejects_bad_arguments() {
        let (corpus, _, dense, queries, _, q) = hand_built();
        assert!(mdr_retrieve(&q, 0, 1, &queries, &corpus, &dense).is_err());
        assert!(mdr_retrieve(&q, 2, 5, &queries, &corpus, &dense).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("colbert".parse::<Method>().is_err());
    }
}
