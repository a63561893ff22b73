//! Hashed bag-of-words dual encoder and the embedding file formats.
//!
//! A token sequence `T` is featurized into `ℝ^V` by the hashing trick: each
//! token's 64-bit FNV-1a hash selects bucket `h % V` and bit 63 of the hash
//! picks the sign (set means −1). Counts are scaled by `1/√|T|` and the
//! vector is then L2-normalized. Queries go through `W_q`, passages through
//! `W_p`, both `d × V`, with no output normalization; similarity is the raw
//! inner product.
//!
//! Weights are stored feature-major: column `f` of `W` occupies
//! `w[f·d .. (f+1)·d]`, so a sparse feature touches one contiguous slice.
//!
//! # File formats
//!
//! `HSEM1` embeddings: magic, `d: u32`, `count: u64`, then per row
//! `id_len: u16`, UTF-8 id, `d` × `f32`. Little-endian throughout.
//!
//! `HSCK1` checkpoints: magic, `V: u32`, `d: u32`, `seed: u64`,
//! `echo_len: u32` + UTF-8 JSON config echo, then `W_q` and `W_p` as
//! `V·d` little-endian `f32` each, in the feature-major order above.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::corpus::{Corpus, Passage, Question};
use crate::lexical::Cursor;
use crate::par::{self, Execution};
use crate::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 5] = b"HSEM1";
pub const CHECKPOINT_MAGIC: &[u8; 5] = b"HSCK1";

pub const DEFAULT_HASH_DIM: usize = 4096;
pub const DEFAULT_EMBED_DIM: usize = 64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Sparse, L2-normalized hashed bag of words. Indices are strictly increasing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Features {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl Features {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .map(|&i| i as usize)
            .zip(self.values.iter().copied())
    }

    pub fn scaled(&self, alpha: f64) -> Features {
        Features {
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| v * alpha).collect(),
        }
    }
}

pub fn featurize<S: AsRef<str>>(tokens: &[S], hash_dim: usize) -> Features {
    if tokens.is_empty() {
        return Features::default();
    }
    let mut buckets = std::collections::BTreeMap::<u32, f64>::new();
    for t in tokens {
        let h = fnv1a64(t.as_ref().as_bytes());
        let idx = (h % hash_dim as u64) as u32;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        *buckets.entry(idx).or_insert(0.0) += sign;
    }
    let scale = 1.0 / (tokens.len() as f64).sqrt();
    let (indices, mut values): (Vec<u32>, Vec<f64>) = buckets
        .into_iter()
        .filter(|&(_, v)| v != 0.0)
        .map(|(i, v)| (i, v * scale))
        .unzip();
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v /= norm;
        }
    }
    Features { indices, values }
}

/// `out = W · x` for a feature-major `W` with `d` rows.
pub fn project(w: &[f64], d: usize, x: &Features) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for (f, v) in x.iter() {
        for (o, wv) in out.iter_mut().zip(&w[f * d..(f + 1) * d]) {
            *o += v * wv;
        }
    }
    out
}

/// Two-tower linear encoder over hashed bag-of-words features.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    hash_dim: usize,
    embed_dim: usize,
    seed: u64,
    wq: Vec<f64>,
    wp: Vec<f64>,
}

impl ToyEncoder {
    /// Initializes `W_q` from Xoshiro256++ seeded via `seed_from_u64(seed)`
    /// (SplitMix64 expansion), entries uniform in `[−√(3/d), √(3/d))` drawn as
    /// `(next_u64 >> 11)·2⁻⁵³`. `W_p` starts as a copy of `W_q`, so an
    /// untrained encoder scores like a random projection of lexical overlap.
    pub fn new(hash_dim: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        if hash_dim == 0 || embed_dim == 0 {
            return Err(Error::InvalidDimension(hash_dim.min(embed_dim)));
        }
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let bound = (3.0 / embed_dim as f64).sqrt();
        let wq: Vec<f64> = (0..hash_dim * embed_dim)
            .map(|_| {
                let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                (2.0 * u - 1.0) * bound
            })
            .collect();
        let wp = wq.clone();
        Ok(ToyEncoder {
            hash_dim,
            embed_dim,
            seed,
            wq,
            wp,
        })
    }

    pub fn from_weights(
        hash_dim: usize,
        embed_dim: usize,
        seed: u64,
        wq: Vec<f64>,
        wp: Vec<f64>,
    ) -> Result<Self> {
        if hash_dim == 0 || embed_dim == 0 {
            return Err(Error::InvalidDimension(hash_dim.min(embed_dim)));
        }
        let n = hash_dim * embed_dim;
        for w in [&wq, &wp] {
            if w.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: w.len(),
                });
            }
        }
        Ok(ToyEncoder {
            hash_dim,
            embed_dim,
            seed,
            wq,
            wp,
        })
    }

    pub fn hash_dim(&self) -> usize {
        self.hash_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn query_weights(&self) -> &[f64] {
        &self.wq
    }

    pub fn passage_weights(&self) -> &[f64] {
        &self.wp
    }

    pub fn weights_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.wq, &mut self.wp)
    }

    pub fn featurize<S: AsRef<str>>(&self, tokens: &[S]) -> Features {
        featurize(tokens, self.hash_dim)
    }

    pub fn project_query(&self, x: &Features) -> Vec<f64> {
        project(&self.wq, self.embed_dim, x)
    }

    pub fn project_passage(&self, x: &Features) -> Vec<f64> {
        project(&self.wp, self.embed_dim, x)
    }

    pub fn encode_passage_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        self.project_passage(&self.featurize(tokens))
    }

    pub fn encode_query_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        self.project_query(&self.featurize(tokens))
    }

    pub fn encode_passage(&self, p: &Passage) -> Result<Vec<f64>> {
        if p.tokens.is_empty() {
            return Err(Error::NoTokens(p.id.clone()));
        }
        Ok(self.encode_passage_tokens(&p.tokens))
    }

    /// Encodes `tokens(q)`, or `tokens(q) ⧺ tokens(prev)` when a previous-hop
    /// passage is given.
    pub fn encode_query(&self, q: &Question, prev: Option<&Passage>) -> Result<Vec<f64>> {
        let tokens = hop_query_tokens(q, prev);
        if tokens.is_empty() {
            return Err(Error::NoTokens(q.id.clone()));
        }
        Ok(self.encode_query_tokens(&tokens))
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>, config_echo: &str) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.hash_dim as u32).to_le_bytes())?;
        w.write_all(&(self.embed_dim as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(config_echo.len() as u32).to_le_bytes())?;
        w.write_all(config_echo.as_bytes())?;
        for block in [&self.wq, &self.wp] {
            for &v in block.iter() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Returns the encoder and the stored config echo.
    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        let mut r = Cursor::new(&bytes);
        if r.take(5)? != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic { expected: "HSCK1" });
        }
        let hash_dim = r.u32()? as usize;
        let embed_dim = r.u32()? as usize;
        let seed = r.u64()?;
        let echo_len = r.u32()? as usize;
        let echo = String::from_utf8(r.take(echo_len)?.to_vec())
            .map_err(|_| Error::Malformed("config echo is not UTF-8".into()))?;
        if hash_dim == 0 || embed_dim == 0 {
            return Err(Error::InvalidDimension(hash_dim.min(embed_dim)));
        }
        let n = hash_dim * embed_dim;
        let mut block = || -> Result<Vec<f64>> { (0..n).map(|_| r.f32().map(f64::from)).collect() };
        let wq = block()?;
        let wp = block()?;
        Ok((
            ToyEncoder::from_weights(hash_dim, embed_dim, seed, wq, wp)?,
            echo,
        ))
    }
}

pub fn hop_query_tokens<'a>(q: &'a Question, prev: Option<&'a Passage>) -> Vec<&'a str> {
    q.tokens
        .iter()
        .chain(prev.into_iter().flat_map(|p| p.tokens.iter()))
        .map(String::as_str)
        .collect()
}

/// Anything that can produce the hop-`t` query vector `h(q, p_{t−1})`.
pub trait QueryEncoder: Sync {
    fn dim(&self) -> usize;
    fn encode_query(&self, q: &Question, prev: Option<&Passage>) -> Result<Vec<f32>>;
}

impl QueryEncoder for ToyEncoder {
    fn dim(&self) -> usize {
        self.embed_dim
    }

    fn encode_query(&self, q: &Question, prev: Option<&Passage>) -> Result<Vec<f32>> {
        Ok(to_f32(&ToyEncoder::encode_query(self, q, prev)?))
    }
}

/// Query vectors loaded from an embedding file. Hop-1 rows are keyed by the
/// question id, hop-2 rows by [`hop_key`].
#[derive(Debug, Clone)]
pub struct PrecomputedQueries {
    matrix: EmbeddingMatrix,
    rows: std::collections::HashMap<String, usize>,
}

/// Row id for a question conditioned on a previous-hop passage.
pub fn hop_key(question_id: &str, passage_id: &str) -> String {
    format!("{question_id}::{passage_id}")
}

impl PrecomputedQueries {
    pub fn new(matrix: EmbeddingMatrix) -> Self {
        let rows = matrix
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        PrecomputedQueries { matrix, rows }
    }

    pub fn row(&self, key: &str) -> Option<&[f32]> {
        self.rows.get(key).map(|&i| self.matrix.row(i))
    }
}

impl QueryEncoder for PrecomputedQueries {
    fn dim(&self) -> usize {
        self.matrix.dim()
    }

    fn encode_query(&self, q: &Question, prev: Option<&Passage>) -> Result<Vec<f32>> {
        let key = match prev {
            None => q.id.clone(),
            Some(p) => hop_key(&q.id, &p.id),
        };
        self.row(&key)
            .map(<[f32]>::to_vec)
            .ok_or_else(|| Error::InvalidArgument(format!("no precomputed query vector for {key}")))
    }
}

pub fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Id-aligned dense vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, ids: Vec<String>, vectors: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if vectors.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                got: vectors.len(),
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        for (id, row) in ids.iter().zip(vectors.chunks_exact(dim)) {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(id.clone()));
            }
        }
        Ok(EmbeddingMatrix { dim, ids, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.vectors.chunks_exact(self.dim))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes()?)?;
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(17 + self.vectors.len() * 4 + self.ids.len() * 12);
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for (id, row) in self.rows() {
            let len = u16::try_from(id.len())
                .map_err(|_| Error::InvalidArgument(format!("id too long: {id}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        if r.take(5).ok() != Some(EMBEDDING_MAGIC.as_slice()) {
            return Err(Error::BadMagic { expected: "HSEM1" });
        }
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        let count = r.u64()? as usize;
        let mut ids = Vec::with_capacity(count.min(1 << 20));
        let mut vectors = Vec::with_capacity(count.min(1 << 20) * dim);
        for _ in 0..count {
            ids.push(r.string()?);
            for _ in 0..dim {
                vectors.push(r.f32()?);
            }
        }
        if !r.is_empty() {
            return Err(Error::Malformed("trailing bytes after last row".into()));
        }
        EmbeddingMatrix::new(dim, ids, vectors)
    }
}

/// Encodes every passage with `W_p`.
pub fn encode_corpus(
    enc: &ToyEncoder,
    corpus: &Corpus,
    exec: Execution,
) -> Result<EmbeddingMatrix> {
    let rows = par::try_map(exec, corpus.passages(), |p| enc.encode_passage(p))?;
    let ids = corpus.passages().iter().map(|p| p.id.clone()).collect();
    EmbeddingMatrix::new(
        enc.embed_dim(),
        ids,
        rows.iter().flat_map(|r| to_f32(r)).collect(),
    )
}

/// Encodes hop-1 queries (question text only), keyed by question id.
pub fn encode_questions(
    enc: &ToyEncoder,
    questions: &[Question],
    exec: Execution,
) -> Result<EmbeddingMatrix> {
    let rows = par::try_map(exec, questions, |q| ToyEncoder::encode_query(enc, q, None))?;
    let ids = questions.iter().map(|q| q.id.clone()).collect();
    EmbeddingMatrix::new(
        enc.embed_dim(),
        ids,
        rows.iter().flat_map(|r| to_f32(r)).collect(),
    )
}
