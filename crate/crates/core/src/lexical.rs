//! BM25 inverted index.
//!
//! Scoring is the Lucene variant:
//!
//! ```text
//! score(q, d) = Σ_{t ∈ unique(q)} idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·dl/avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! with `k1 = 0.9`, `b = 0.4` by default. Terms absent from the index add nothing.
//!
//! # `HSLX1` file layout
//!
//! All integers little-endian. The file is the 5-byte magic `HSLX1` followed by
//! sections, each `tag: [u8; 4]`, `len: u64`, then `len` payload bytes:
//!
//! * `PARM`: `k1: f64`, `b: f64`.
//! * `DLEN`: `count: u64`, then per passage in index order `id_len: u16`, UTF-8 id, `dl: u32`.
//! * `POST`: `terms: u64`, then per term (sorted by bytes) `term_len: u16`, UTF-8 term,
//!   `n: u32`, then `n` pairs of `doc: u32` (ordinal into `DLEN`) and `tf: u32`.
//!
//! Readers skip sections with unknown tags.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::Corpus;
use crate::rank::{sort_ranked, Ranked};
use crate::{Error, Result};

pub const LEXICAL_MAGIC: &[u8; 5] = b"HSLX1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "k1 must be finite and >= 0, got {}",
                self.k1
            )));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidArgument(format!(
                "b must lie in [0, 1], got {}",
                self.b
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone)]
pub struct InvertedIndex {
    params: Bm25Params,
    ids: Vec<String>,
    doc_len: Vec<u32>,
    ordinal: HashMap<String, u32>,
    postings: HashMap<String, Vec<Posting>>,
    avgdl: f64,
}

impl InvertedIndex {
    pub fn build(corpus: &Corpus) -> Result<Self> {
        Self::build_with(corpus, Bm25Params::default())
    }

    pub fn build_with(corpus: &Corpus, params: Bm25Params) -> Result<Self> {
        params.validate()?;
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut ids = Vec::with_capacity(corpus.len());
        let mut doc_len = Vec::with_capacity(corpus.len());
        for (doc, p) in corpus.passages().iter().enumerate() {
            let doc = u32::try_from(doc)
                .map_err(|_| Error::InvalidArgument("corpus too large".into()))?;
            let mut tf: HashMap<&str, u32> = HashMap::new();
            for t in &p.tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (t, n) in tf {
                postings
                    .entry(t.to_string())
                    .or_default()
                    .push(Posting { doc, tf: n });
            }
            ids.push(p.id.clone());
            doc_len.push(p.tokens.len() as u32);
        }
        Self::assemble(params, ids, doc_len, postings)
    }

    fn assemble(
        params: Bm25Params,
        ids: Vec<String>,
        doc_len: Vec<u32>,
        mut postings: HashMap<String, Vec<Posting>>,
    ) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let total: u64 = doc_len.iter().map(|&l| u64::from(l)).sum();
        if total == 0 {
            return Err(Error::InvalidArgument("corpus contains no tokens".into()));
        }
        let avgdl = total as f64 / ids.len() as f64;
        for list in postings.values_mut() {
            list.sort_unstable_by_key(|p| p.doc);
        }
        let mut ordinal = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if ordinal.insert(id.clone(), i as u32).is_some() {
                return Err(Error::DuplicatePassage(id.clone()));
            }
        }
        Ok(InvertedIndex {
            params,
            ids,
            doc_len,
            ordinal,
            postings,
            avgdl,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn passage_count(&self) -> usize {
        self.ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_len(&self, id: &str) -> Option<u32> {
        self.ordinal.get(id).map(|&d| self.doc_len[d as usize])
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn vocab_size(&self) -> usize {
        self.postings.len()
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    /// `ln(1 + (N − df + 0.5)/(df + 0.5))`; zero for terms not in the index.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df(term);
        if df == 0 {
            return 0.0;
        }
        let n = self.ids.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, dl: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = f64::from(tf);
        let norm = k1 * (1.0 - b + b * f64::from(dl) / self.avgdl);
        idf * tf * (k1 + 1.0) / (tf + norm)
    }

    pub fn bm25_score(&self, query_tokens: &[String], passage_id: &str) -> Result<f64> {
        let doc = *self
            .ordinal
            .get(passage_id)
            .ok_or_else(|| Error::UnknownPassage(passage_id.to_string()))?;
        let dl = self.doc_len[doc as usize];
        let mut score = 0.0;
        for term in unique_terms(query_tokens) {
            let list = self.postings(term);
            if let Ok(pos) = list.binary_search_by_key(&doc, |p| p.doc) {
                score += self.term_weight(self.idf(term), list[pos].tf, dl);
            }
        }
        Ok(score)
    }

    /// Top-`k` passages with positive score, descending, ties by ascending id.
    pub fn search(&self, query_tokens: &[String], k: usize) -> Result<Vec<Ranked>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        // Accumulate in query-term order so every passage sums its terms in
        // the same order as `bm25_score`.
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for term in unique_terms(query_tokens) {
            let idf = self.idf(term);
            for p in self.postings(term) {
                *acc.entry(p.doc).or_insert(0.0) +=
                    self.term_weight(idf, p.tf, self.doc_len[p.doc as usize]);
            }
        }
        let mut hits: Vec<Ranked> = acc
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(d, s)| Ranked::new(self.ids[d as usize].clone(), s))
            .collect();
        sort_ranked(&mut hits);
        hits.truncate(k);
        Ok(hits)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(LEXICAL_MAGIC)?;

        let mut parm = Vec::with_capacity(16);
        parm.extend_from_slice(&self.params.k1.to_le_bytes());
        parm.extend_from_slice(&self.params.b.to_le_bytes());
        write_section(&mut w, b"PARM", &parm)?;

        let mut dlen = Vec::new();
        dlen.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for (id, &l) in self.ids.iter().zip(&self.doc_len) {
            put_str(&mut dlen, id)?;
            dlen.extend_from_slice(&l.to_le_bytes());
        }
        write_section(&mut w, b"DLEN", &dlen)?;

        let mut terms: Vec<&String> = self.postings.keys().collect();
        terms.sort();
        let mut post = Vec::new();
        post.extend_from_slice(&(terms.len() as u64).to_le_bytes());
        for t in terms {
            put_str(&mut post, t)?;
            let list = &self.postings[t];
            post.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for p in list {
                post.extend_from_slice(&p.doc.to_le_bytes());
                post.extend_from_slice(&p.tf.to_le_bytes());
            }
        }
        write_section(&mut w, b"POST", &post)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        if r.take(5)? != LEXICAL_MAGIC {
            return Err(Error::BadMagic { expected: "HSLX1" });
        }
        let mut params = None;
        let mut docs = None;
        let mut postings = None;
        while !r.is_empty() {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len = usize::try_from(r.u64()?).map_err(|_| Error::Truncated("section length"))?;
            let mut s = Cursor::new(r.take(len)?);
            match &tag {
                b"PARM" => {
                    params = Some(Bm25Params {
                        k1: s.f64()?,
                        b: s.f64()?,
                    });
                }
                b"DLEN" => {
                    let n = s.u64()? as usize;
                    let mut ids = Vec::with_capacity(n.min(1 << 20));
                    let mut lens = Vec::with_capacity(n.min(1 << 20));
                    for _ in 0..n {
                        ids.push(s.string()?);
                        lens.push(s.u32()?);
                    }
                    docs = Some((ids, lens));
                }
                b"POST" => {
                    let n = s.u64()? as usize;
                    let mut map = HashMap::with_capacity(n.min(1 << 20));
                    for _ in 0..n {
                        let term = s.string()?;
                        let m = s.u32()? as usize;
                        let mut list = Vec::with_capacity(m.min(1 << 20));
                        for _ in 0..m {
                            list.push(Posting {
                                doc: s.u32()?,
                                tf: s.u32()?,
                            });
                        }
                        map.insert(term, list);
                    }
                    postings = Some(map);
                }
                _ => {}
            }
        }
        let params = params.ok_or_else(|| Error::Malformed("missing PARM section".into()))?;
        params.validate()?;
        let (ids, doc_len) = docs.ok_or_else(|| Error::Malformed("missing DLEN section".into()))?;
        let postings = postings.ok_or_else(|| Error::Malformed("missing POST section".into()))?;
        for list in postings.values() {
            for p in list {
                if p.doc as usize >= ids.len() || p.tf == 0 {
                    return Err(Error::Malformed(
                        "posting references unknown passage or has tf 0".into(),
                    ));
                }
            }
        }
        Self::assemble(params, ids, doc_len, postings)
    }
}

pub(crate) fn unique_terms(tokens: &[String]) -> impl Iterator<Item = &str> {
    let mut seen = HashSet::new();
    tokens
        .iter()
        .map(String::as_str)
        .filter(move |t| seen.insert(*t))
}

fn write_section(w: &mut impl Write, tag: &[u8; 4], payload: &[u8]) -> Result<()> {
    w.write_all(tag)?;
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    w.write_all(payload)?;
    Ok(())
}

fn put_str(buf: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| Error::InvalidArgument(format!("string too long: {s}")))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Little-endian byte reader shared by the binary formats.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Cursor { buf }
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Truncated("unexpected end of file"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Malformed("invalid UTF-8 string".into()))
    }
}
