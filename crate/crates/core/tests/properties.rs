use std::collections::HashSet;

use hopwise::corpus::{Corpus, Passage, Question, QuestionType};
use hopwise::dense::DenseIndex;
use hopwise::encoder::{hop_key, EmbeddingMatrix, PrecomputedQueries};
use hopwise::lexical::InvertedIndex;
use hopwise::multihop::{flatten_paths, mdr_retrieve, PathCandidate};
use hopwise::par::Execution;
use hopwise::rerank::{rerank, OverlapScorer};
use proptest::prelude::*;

fn word(i: usize) -> String {
    format!("w{i}")
}

fn build(docs: &[Vec<usize>]) -> (Corpus, InvertedIndex) {
    let passages = docs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            Passage::new(
                format!("p{i:03}"),
                "",
                d.iter().map(|&w| word(w)).collect::<Vec<_>>().join(" "),
            )
        })
        .collect();
    let corpus = Corpus::from_passages(passages).unwrap();
    let index = InvertedIndex::build(&corpus).unwrap();
    (corpus, index)
}

/// Textbook BM25 from raw token lists, k1 = 0.9, b = 0.4.
fn bm25_oracle(docs: &[Vec<String>], query: &[String], doc: usize) -> f64 {
    let (k1, b) = (0.9, 0.4);
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut seen = HashSet::new();
    let mut score = 0.0;
    for t in query {
        if !seen.insert(t) {
            continue;
        }
        let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
        if df == 0.0 {
            continue;
        }
        let tf = docs[doc].iter().filter(|x| *x == t).count() as f64;
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        let dl = docs[doc].len() as f64;
        score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
    }
    score
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn corpus_strategy() -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::vec(0usize..20, 1..15), 1..60)
}

fn query_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..25, 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bm25_matches_scalar_oracle(docs in corpus_strategy(), q in query_strategy()) {
        let (corpus, index) = build(&docs);
        let toks: Vec<Vec<String>> = corpus.passages().iter().map(|p| p.tokens.clone()).collect();
        let query: Vec<String> = q.iter().map(|&w| word(w)).collect();
        let mut expected = Vec::new();
        for (i, p) in corpus.passages().iter().enumerate() {
            let want = bm25_oracle(&toks, &query, i);
            let got = index.bm25_score(&query, &p.id).unwrap();
            prop_assert!(rel_close(got, want, 1e-9), "{}: {} vs {}", p.id, got, want);
            if want > 0.0 {
                expected.push((p.id.clone(), want));
            }
        }
        expected.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let hits = index.search(&query, docs.len()).unwrap();
        prop_assert_eq!(hits.len(), expected.len());
        for (h, (id, s)) in hits.iter().zip(&expected) {
            prop_assert!(rel_close(h.score, *s, 1e-9));
            // Ids may swap only between scores equal up to rounding.
            if &h.id != id {
                prop_assert!(rel_close(index.bm25_score(&query, &h.id).unwrap(), *s, 1e-12));
            }
        }
    }

    #[test]
    fn bm25_search_has_prefix_property(docs in corpus_strategy(), q in query_strategy(), k in 1usize..10, extra in 0usize..20) {
        let (_, index) = build(&docs);
        let query: Vec<String> = q.iter().map(|&w| word(w)).collect();
        let short = index.search(&query, k).unwrap();
        let long = index.search(&query, k + extra).unwrap();
        prop_assert_eq!(&long[..short.len()], &short[..]);
    }

    #[test]
    fn bm25_is_monotone_in_tf(docs in corpus_strategy(), q in query_strategy(), pick in any::<prop::sample::Index>()) {
        let query: Vec<String> = q.iter().map(|&w| word(w)).collect();
        let qset: HashSet<usize> = q.iter().copied().collect();
        let target = pick.index(docs.len());
        // Swap one non-query token for a query term so the length stays fixed.
        let Some(pos) = docs[target].iter().position(|w| !qset.contains(w)) else { return Ok(()) };
        let (_, before) = build(&docs);
        let mut bumped = docs.clone();
        bumped[target][pos] = q[0];
        let (_, after) = build(&bumped);
        let id = format!("p{target:03}");
        prop_assert!(after.bm25_score(&query, &id).unwrap() >= before.bm25_score(&query, &id).unwrap() - 1e-12);
    }

    #[test]
    fn rerank_stays_within_bm25_candidates(docs in corpus_strategy(), q in query_strategy(), kc in 1usize..30, grow in 0usize..30) {
        let (corpus, index) = build(&docs);
        let text = q.iter().map(|&w| word(w)).collect::<Vec<_>>().join(" ");
        let question = Question::new("q", text, QuestionType::Bridge, "p000", "p000");
        let scorer = OverlapScorer::new(&index);
        let out = rerank(&question, &corpus, &index, &scorer, kc, kc, Execution::Sequential).unwrap();
        let pool: HashSet<String> = index.search(&question.tokens, kc).unwrap().into_iter().map(|h| h.id).collect();
        prop_assert!(out.iter().all(|r| pool.contains(&r.id)));
        let again = rerank(&question, &corpus, &index, &scorer, kc, kc, Execution::default()).unwrap();
        prop_assert_eq!(&out, &again);
        let wider = rerank(&question, &corpus, &index, &scorer, kc + grow, kc + grow, Execution::Sequential).unwrap();
        let reach: HashSet<&String> = wider.iter().map(|r| &r.id).collect();
        prop_assert!(out.iter().all(|r| reach.contains(&r.id)));
    }
}

fn matrix(rows: &[Vec<i8>], dim: usize) -> EmbeddingMatrix {
    // Ids run opposite to row order so tie-breaking by id is observable.
    let n = rows.len();
    let ids = (0..n).map(|i| format!("r{:04}", n - i)).collect();
    let vectors = rows
        .iter()
        .flat_map(|r| r.iter().map(|&v| f32::from(v)))
        .collect();
    EmbeddingMatrix::new(dim, ids, vectors).unwrap()
}

fn brute_force(
    m: &EmbeddingMatrix,
    q: &[f32],
    k: usize,
    exclude: &HashSet<String>,
) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = m
        .rows()
        .filter(|(id, _)| !exclude.contains(*id))
        .map(|(id, row)| {
            (
                id.to_string(),
                row.iter()
                    .zip(q)
                    .map(|(a, b)| f64::from(*a) * f64::from(*b))
                    .sum(),
            )
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn dense_case() -> impl Strategy<Value = (usize, Vec<Vec<i8>>, Vec<i8>)> {
    (1usize..12).prop_flat_map(|d| {
        (
            Just(d),
            prop::collection::vec(prop::collection::vec(-2i8..=2, d), 1..150),
            prop::collection::vec(-2i8..=2, d),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dense_search_is_exact(case in dense_case(), k in 1usize..40, drop in prop::collection::vec(any::<prop::sample::Index>(), 0..10)) {
        let (d, rows, q) = case;
        let m = matrix(&rows, d);
        let exclude: HashSet<String> = drop.iter().map(|i| m.ids()[i.index(m.len())].clone()).collect();
        let query: Vec<f32> = q.iter().map(|&v| f32::from(v)).collect();
        let index = DenseIndex::new(m.clone());
        let hits = index.search(&query, k, &exclude).unwrap();
        let want = brute_force(&m, &query, k, &exclude);
        let got: Vec<(String, f64)> = hits.iter().map(|h| (h.id.clone(), h.score)).collect();
        prop_assert_eq!(&got, &want);
        prop_assert!(hits.iter().all(|h| !exclude.contains(&h.id)));
        prop_assert_eq!(hits.len(), k.min(m.len() - exclude.len()));

        for alpha in [0.5f32, 2.0, 4.0] {
            let scaled: Vec<f32> = query.iter().map(|v| v * alpha).collect();
            let s = index.search(&scaled, k, &exclude).unwrap();
            prop_assert_eq!(s.iter().map(|h| &h.id).collect::<Vec<_>>(), hits.iter().map(|h| &h.id).collect::<Vec<_>>());
            for (a, b) in s.iter().zip(&hits) {
                prop_assert_eq!(a.score, b.score * f64::from(alpha));
            }
        }
    }
}

struct BeamCase {
    corpus: Corpus,
    dense: DenseIndex,
    queries: PrecomputedQueries,
    question: Question,
}

fn beam_case(n: usize, d: usize, values: &[f32]) -> BeamCase {
    let ids: Vec<String> = (0..n).map(|i| format!("p{i:03}")).collect();
    let corpus = Corpus::from_passages(
        ids.iter()
            .map(|id| Passage::new(id.clone(), "", "x"))
            .collect(),
    )
    .unwrap();
    let mut it = values.iter().copied().cycle();
    let mut take =
        |rows: usize| -> Vec<f32> { (0..rows * d).map(|_| it.next().unwrap()).collect() };
    let dense = DenseIndex::new(EmbeddingMatrix::new(d, ids.clone(), take(n)).unwrap());
    let mut qids = vec!["q".to_string()];
    qids.extend(ids.iter().map(|p| hop_key("q", p)));
    let queries = PrecomputedQueries::new(EmbeddingMatrix::new(d, qids, take(n + 1)).unwrap());
    let question = Question::new("q", "x", QuestionType::Bridge, &ids[0], &ids[n.min(2) - 1]);
    BeamCase {
        corpus,
        dense,
        queries,
        question,
    }
}

fn exhaustive_best(case: &BeamCase) -> (String, String, f64) {
    let m = case.dense.matrix();
    let dot = |a: &[f32], b: &[f32]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| f64::from(*x) * f64::from(*y))
            .sum::<f64>()
    };
    let q = case.queries.row("q").unwrap();
    let mut best: Option<(String, String, f64)> = None;
    for (i, (a, pa)) in m.rows().enumerate() {
        let qa = case.queries.row(&hop_key("q", a)).unwrap();
        for (j, (b, pb)) in m.rows().enumerate() {
            if i == j {
                continue;
            }
            let total = dot(q, pa) + dot(qa, pb);
            let better = match &best {
                None => true,
                Some((ba, bb, bt)) => {
                    total > *bt || (total == *bt && (a, b) < (ba.as_str(), bb.as_str()))
                }
            };
            if better {
                best = Some((a.to_string(), b.to_string(), total));
            }
        }
    }
    best.unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn full_width_beam_finds_the_best_pair(n in 2usize..25, d in 1usize..6, values in prop::collection::vec(-1.0f32..1.0, 16..64)) {
        let case = beam_case(n, d, &values);
        let paths = mdr_retrieve(&case.question, n, 1, &case.queries, &case.corpus, &case.dense).unwrap();
        let (a, b, total) = exhaustive_best(&case);
        prop_assert_eq!(&paths[0].hop_passages, &vec![a, b]);
        prop_assert!((paths[0].total_score - total).abs() <= 1e-9 * total.abs().max(1.0));
    }

    #[test]
    fn wider_beams_never_lower_the_best_total(n in 2usize..20, d in 1usize..6, values in prop::collection::vec(-1.0f32..1.0, 16..64)) {
        let case = beam_case(n, d, &values);
        let mut prev = f64::NEG_INFINITY;
        for b in 1..=n {
            let paths = mdr_retrieve(&case.question, b, b * b, &case.queries, &case.corpus, &case.dense).unwrap();
            prop_assert!(paths[0].total_score >= prev);
            prev = paths[0].total_score;
            for p in &paths {
                let sum: f64 = p.hop_scores.iter().sum();
                prop_assert!((p.total_score - sum).abs() <= 1e-9 * sum.abs().max(1.0));
                prop_assert!(p.hop_passages[0] != p.hop_passages[1]);
            }
            for w in paths.windows(2) {
                prop_assert!(w[0].total_score >= w[1].total_score);
            }
        }
    }

    #[test]
    fn flattening_keeps_first_occurrences(pairs in prop::collection::vec((0u8..8, 0u8..8), 0..12), k in 1usize..20) {
        let paths: Vec<PathCandidate> = pairs
            .iter()
            .map(|(a, b)| PathCandidate::new(vec![format!("p{a}"), format!("p{b}")], vec![0.0, 0.0]))
            .collect();
        let flat = flatten_paths(&paths, k);
        let mut expected: Vec<String> = Vec::new();
        for p in &paths {
            for id in &p.hop_passages {
                if !expected.contains(id) {
                    expected.push(id.clone());
                }
            }
        }
        expected.truncate(k);
        prop_assert_eq!(flat, expected);
    }
}
