//! Passages, questions, and the tokenizer every other module shares.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Lowercases and splits on every maximal run of non-alphanumeric characters.
///
/// No stemming, no stopwords. Empty input yields no tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    // Lowercase first: some case mappings emit non-alphanumeric marks.
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Passage {
    pub id: String,
    pub title: String,
    pub text: String,
    /// `tokenize(title + " " + text)`.
    pub tokens: Vec<String>,
}

impl Passage {
    pub fn new(id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        let id = id.into();
        let title = title.into();
        let text = text.into();
        let tokens = tokenize(&format!("{title} {text}"));
        Passage {
            id,
            title,
            text,
            tokens,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PassageRecord {
    id: String,
    title: String,
    text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    Bridge,
    Comparison,
}

impl std::str::FromStr for QuestionType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bridge" => Ok(QuestionType::Bridge),
            "comparison" => Ok(QuestionType::Comparison),
            other => Err(Error::InvalidQuestionType(other.to_string())),
        }
    }
}

impl QuestionType {
    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::Bridge => "bridge",
            QuestionType::Comparison => "comparison",
        }
    }
}

/// A two-hop question with its ordered gold passage pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub qtype: QuestionType,
    pub gold_hop1: String,
    pub gold_hop2: String,
    pub tokens: Vec<String>,
}

impl Question {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        qtype: QuestionType,
        gold_hop1: impl Into<String>,
        gold_hop2: impl Into<String>,
    ) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Question {
            id: id.into(),
            text,
            qtype,
            gold_hop1: gold_hop1.into(),
            gold_hop2: gold_hop2.into(),
            tokens,
        }
    }

    pub fn golds(&self) -> (&str, &str) {
        (&self.gold_hop1, &self.gold_hop2)
    }
}

#[derive(Serialize, Deserialize)]
struct QuestionRecord {
    id: String,
    text: String,
    qtype: String,
    gold_hop1: String,
    gold_hop2: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorpusStats {
    pub passage_count: usize,
    pub avg_doc_len: f64,
    pub vocab_size: usize,
}

/// An immutable passage collection with id lookup.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_passages(passages: Vec<Passage>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if p.id.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "passage {i} has an empty id"
                )));
            }
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::DuplicatePassage(p.id.clone()));
            }
        }
        Ok(Corpus { passages, by_id })
    }

    /// Reads passage JSONL (`{"id", "title", "text"}` per line). Blank lines are skipped.
    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut passages = Vec::new();
        let mut by_id = HashMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PassageRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            if rec.id.is_empty() {
                return Err(Error::Parse {
                    line: n + 1,
                    message: "empty passage id".into(),
                });
            }
            if by_id.insert(rec.id.clone(), passages.len()).is_some() {
                return Err(Error::DuplicatePassage(rec.id));
            }
            passages.push(Passage::new(rec.id, rec.title, rec.text));
        }
        Ok(Corpus { passages, by_id })
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for p in &self.passages {
            let rec = PassageRecord {
                id: p.id.clone(),
                title: p.title.clone(),
                text: p.text.clone(),
            };
            serde_json::to_writer(&mut w, &rec).map_err(io_err)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).map(|&i| &self.passages[i])
    }

    pub fn require(&self, id: &str) -> Result<&Passage> {
        self.get(id)
            .ok_or_else(|| Error::UnknownPassage(id.to_string()))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn stats(&self) -> CorpusStats {
        let total: usize = self.passages.iter().map(|p| p.tokens.len()).sum();
        let vocab: std::collections::HashSet<&str> = self
            .passages
            .iter()
            .flat_map(|p| p.tokens.iter().map(String::as_str))
            .collect();
        let avg_doc_len = if self.passages.is_empty() {
            0.0
        } else {
            total as f64 / self.passages.len() as f64
        };
        CorpusStats {
            passage_count: self.passages.len(),
            avg_doc_len,
            vocab_size: vocab.len(),
        }
    }

    pub fn validate_question(&self, q: &Question) -> Result<()> {
        if q.gold_hop1 == q.gold_hop2 {
            return Err(Error::SameGolds(q.id.clone()));
        }
        self.require(&q.gold_hop1)?;
        self.require(&q.gold_hop2)?;
        Ok(())
    }
}

/// Loads question JSONL and checks every gold id against `corpus`.
pub fn load_questions(path: impl AsRef<Path>, corpus: &Corpus) -> Result<Vec<Question>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |e: Error| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        };
        let rec: QuestionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        let qtype: QuestionType = rec.qtype.parse().map_err(at)?;
        let q = Question::new(rec.id, rec.text, qtype, rec.gold_hop1, rec.gold_hop2);
        corpus.validate_question(&q).map_err(at)?;
        if !seen.insert(q.id.clone()) {
            return Err(at(Error::DuplicateId(q.id)));
        }
        out.push(q);
    }
    Ok(out)
}

pub fn write_questions(path: impl AsRef<Path>, questions: &[Question]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for q in questions {
        let rec = QuestionRecord {
            id: q.id.clone(),
            text: q.text.clone(),
            qtype: q.qtype.as_str().to_string(),
            gold_hop1: q.gold_hop1.clone(),
            gold_hop2: q.gold_hop2.clone(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(io_err)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn io_err(e: serde_json::Error) -> Error {
    Error::Io(e.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("Robert Smith founded General Mills."),
            vec!["robert", "smith", "founded", "general", "mills"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("B2FH paper (1957)"), vec!["b2fh", "paper", "1957"]);
        assert_eq!(
            tokenize("Schmidt-Leichner Ärzte"),
            vec!["schmidt", "leichner", "ärzte"]
        );
    }

    #[test]
    fn passage_tokens_include_title() {
        let p = Passage::new("p", "Fred Hoyle", "astronomer");
        assert_eq!(p.tokens, vec!["fred", "hoyle", "astronomer"]);
    }

    #[test]
    fn ingest_counts_and_mean_length() {
        let f = write(&[
            r#"{"id":"a","title":"","text":"one two three four"}"#,
            r#"{"id":"b","title":"five","text":"six seven eight nine ten"}"#,
        ]);
        let c = Corpus::load_jsonl(f.path()).unwrap();
        let s = c.stats();
        assert_eq!(s.passage_count, 2);
        assert_eq!(s.avg_doc_len, 5.0);
        assert_eq!(s.vocab_size, 10);
    }

    #[test]
    fn ingest_three_lines() {
        let f = write(&[
            r#"{"id":"p1","title":"t","text":"x"}"#,
            r#"{"id":"p2","title":"t","text":"y"}"#,
            r#"{"id":"p3","title":"t","text":"z"}"#,
        ]);
        assert_eq!(
            Corpus::load_jsonl(f.path()).unwrap().stats().passage_count,
            3
        );
    }

    #[test]
    fn ingest_rejects_duplicates_and_garbage() {
        let f = write(&[
            r#"{"id":"p1","title":"","text":"a"}"#,
            r#"{"id":"p1","title":"","text":"b"}"#,
        ]);
        let err = Corpus::load_jsonl(f.path()).unwrap_err();
        assert_eq!(err.to_string(), "duplicate passage id p1");

        let f = write(&[r#"{"id":"p1","title":"","text":"a"}"#, "{not json"]);
        let err = Corpus::load_jsonl(f.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    fn toy_corpus() -> Corpus {
        Corpus::from_passages(vec![Passage::new("a", "", "x"), Passage::new("b", "", "y")]).unwrap()
    }

    #[test]
    fn questions_validate() {
        let c = toy_corpus();
        let good: Vec<String> = (0..10)
            .map(|i| {
                format!(
                    r#"{{"id":"q{i}","text":"t","qtype":"bridge","gold_hop1":"a","gold_hop2":"b"}}"#
                )
            })
            .collect();
        let f = write(&good.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(load_questions(f.path(), &c).unwrap().len(), 10);

        let f =
            write(&[r#"{"id":"q","text":"t","qtype":"multi","gold_hop1":"a","gold_hop2":"b"}"#]);
        let err = load_questions(f.path(), &c).unwrap_err().to_string();
        assert!(err.contains("invalid question type"), "{err}");

        let f = write(&[
            r#"{"id":"q","text":"t","qtype":"bridge","gold_hop1":"missing","gold_hop2":"b"}"#,
        ]);
        let err = load_questions(f.path(), &c).unwrap_err().to_string();
        assert!(err.contains("unknown passage id"), "{err}");

        let f = write(&[
            r#"{"id":"q","text":"t","qtype":"comparison","gold_hop1":"a","gold_hop2":"a"}"#,
        ]);
        assert!(load_questions(f.path(), &c).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let c = Corpus::from_passages(vec![
            Passage::new(
                "p1",
                "Fred Hoyle",
                "Sir Fred Hoyle (24 June 1915) \"quoted\"",
            ),
            Passage::new("p2", "B2FH paper", "landmark\tpaper\nof stellar physics"),
        ])
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        c.write_jsonl(f.path()).unwrap();
        let back = Corpus::load_jsonl(f.path()).unwrap();
        assert_eq!(back.stats(), c.stats());
        assert_eq!(back.passages(), c.passages());
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(s in "\\PC{0,60}") {
            let once = tokenize(&s);
            prop_assert_eq!(tokenize(&once.join(" ")), once);
        }

        #[test]
        fn alphanumeric_text_has_tokens(s in "[a-zA-Z0-9]{1,5}[ .,!-]{0,3}\\PC{0,20}") {
            prop_assert!(!Passage::new("p", "", s).tokens.is_empty());
        }
    }
}
