//! Passage exact match (EM@k) over run files, and per-question run diffs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Serialize, Serializer};

use crate::corpus::Question;
use crate::multihop::QuestionResult;
use crate::{Error, Result};

pub const DEFAULT_KS: [usize; 3] = [2, 10, 20];

/// 1 iff both golds are among the first `min(k, len)` entries.
pub fn em_at_k<S: AsRef<str>>(retrieved: &[S], golds: (&str, &str), k: usize) -> u8 {
    let top = &retrieved[..k.min(retrieved.len())];
    let has = |g: &str| top.iter().any(|r| r.as_ref() == g);
    u8::from(has(golds.0) && has(golds.1))
}

/// Rankings keyed by question id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    rankings: HashMap<String, Vec<String>>,
}

impl Run {
    pub fn from_results(results: &[QuestionResult]) -> Self {
        let rankings = results
            .iter()
            .map(|r| {
                (
                    r.question_id.clone(),
                    r.ranking.iter().map(|h| h.id.clone()).collect(),
                )
            })
            .collect();
        Run { rankings }
    }

    /// Parses `question_id \t passage_id \t rank \t score \t run_tag` lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut entries: HashMap<String, Vec<(usize, String)>> = HashMap::new();
        for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: &str| Error::Parse {
                line: n + 1,
                message: m.to_string(),
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(bad("expected 5 tab-separated columns"));
            }
            let rank: usize = cols[2]
                .parse()
                .map_err(|_| bad("rank is not a positive integer"))?;
            if rank == 0 {
                return Err(bad("ranks start at 1"));
            }
            let score: f64 = cols[3].parse().map_err(|_| bad("score is not a number"))?;
            if score.is_nan() {
                return Err(bad("score is NaN"));
            }
            entries
                .entry(cols[0].to_string())
                .or_default()
                .push((rank, cols[1].to_string()));
        }
        let mut rankings = HashMap::with_capacity(entries.len());
        for (qid, mut list) in entries {
            list.sort();
            if list.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Malformed(format!(
                    "question {qid} has a repeated rank"
                )));
            }
            rankings.insert(qid, list.into_iter().map(|(_, id)| id).collect());
        }
        Ok(Run { rankings })
    }

    pub fn ranking(&self, question_id: &str) -> &[String] {
        self.rankings.get(question_id).map_or(&[], Vec::as_slice)
    }

    pub fn question_ids(&self) -> impl Iterator<Item = &str> {
        self.rankings.keys().map(String::as_str)
    }

    fn check_questions(&self, questions: &[Question]) -> Result<()> {
        let known: HashSet<&str> = questions.iter().map(|q| q.id.as_str()).collect();
        let mut unknown: Vec<&str> = self
            .question_ids()
            .filter(|id| !known.contains(id))
            .collect();
        unknown.sort_unstable();
        match unknown.first() {
            Some(id) => Err(Error::InvalidArgument(format!(
                "run references unknown question {id}"
            ))),
            None => Ok(()),
        }
    }
}

/// 1-based rank of a gold passage, or not retrieved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoldRank(pub Option<usize>);

impl Serialize for GoldRank {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(r) => s.serialize_u64(r as u64),
            None => s.serialize_str("not retrieved"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionEval {
    pub em: BTreeMap<usize, u8>,
    pub gold_ranks: [GoldRank; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub questions: usize,
    pub em_at: BTreeMap<usize, f64>,
    pub per_question: BTreeMap<String, QuestionEval>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn table(&self) -> String {
        let mut out = format!("questions: {}\n", self.questions);
        for (k, v) in &self.em_at {
            let _ = writeln!(out, "EM@{k} = {v:.3}");
        }
        out
    }
}

/// Means over every question in `questions`; questions absent from the run score 0.
pub fn evaluate(run: &Run, questions: &[Question], ks: &[usize]) -> Result<EvalReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument(
            "ks must be non-empty positive integers".into(),
        ));
    }
    run.check_questions(questions)?;
    let mut per_question = BTreeMap::new();
    let mut sums: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    for q in questions {
        let ranking = run.ranking(&q.id);
        let rank_of = |g: &str| GoldRank(ranking.iter().position(|r| r == g).map(|i| i + 1));
        let em: BTreeMap<usize, u8> = ks
            .iter()
            .map(|&k| (k, em_at_k(ranking, q.golds(), k)))
            .collect();
        for (k, v) in &em {
            *sums.get_mut(k).expect("k present") += f64::from(*v);
        }
        per_question.insert(
            q.id.clone(),
            QuestionEval {
                em,
                gold_ranks: [rank_of(&q.gold_hop1), rank_of(&q.gold_hop2)],
            },
        );
    }
    let n = questions.len();
    let em_at = sums
        .into_iter()
        .map(|(k, s)| (k, if n == 0 { 0.0 } else { s / n as f64 }))
        .collect();
    Ok(EvalReport {
        questions: n,
        em_at,
        per_question,
    })
}

pub fn evaluate_run(
    path: impl AsRef<Path>,
    questions: &[Question],
    ks: &[usize],
) -> Result<EvalReport> {
    evaluate(&Run::load(path)?, questions, ks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Category {
    #[serde(rename = "A-only")]
    AOnly,
    #[serde(rename = "B-only")]
    BOnly,
    #[serde(rename = "both")]
    Both,
    #[serde(rename = "neither")]
    Neither,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::AOnly => "A-only",
            Category::BOnly => "B-only",
            Category::Both => "both",
            Category::Neither => "neither",
        }
    }
}

/// Buckets each question by which run gets EM@k; sorted by question id.
pub fn compare_runs(
    a: &Run,
    b: &Run,
    questions: &[Question],
    k: usize,
) -> Result<Vec<(String, Category)>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    a.check_questions(questions)?;
    b.check_questions(questions)?;
    let mut out: Vec<(String, Category)> = questions
        .iter()
        .map(|q| {
            let ea = em_at_k(a.ranking(&q.id), q.golds(), k) == 1;
            let eb = em_at_k(b.ranking(&q.id), q.golds(), k) == 1;
            let cat = match (ea, eb) {
                (true, true) => Category::Both,
                (true, false) => Category::AOnly,
                (false, true) => Category::BOnly,
                (false, false) => Category::Neither,
            };
            (q.id.clone(), cat)
        })
        .collect();
    out.sort_by(|x, y| x.0.cmp(&y.0));
    Ok(out)
}
