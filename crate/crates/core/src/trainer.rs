//! Contrastive training of [`ToyEncoder`] with in-batch negatives.
//!
//! For a batch of `B` examples the candidate list is every positive in the
//! batch followed by every hard negative that is not already a candidate.
//! Example `i` is scored against all candidates:
//!
//! ```text
//! loss_i = logsumexp_j ⟨q_i, c_j⟩ − ⟨q_i, p⁺_i⟩        loss = mean_i loss_i
//! ```
//!
//! Gradient accumulation sums gradients over `S` consecutive batches before
//! one update with their mean. It grows the effective batch for the update
//! but not the candidate list, which is always built from one real batch.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::Serialize;

use crate::corpus::{Corpus, Question};
use crate::encoder::{Features, ToyEncoder};
use crate::lexical::InvertedIndex;
use crate::par::{self, Execution};
use crate::rank::score_cmp;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub query_tokens: Vec<String>,
    pub positive_id: String,
    pub hard_negative_ids: Vec<String>,
}

/// Hop-1 instances: the question alone, positive = first gold.
pub fn build_hop1_dataset(questions: &[Question], corpus: &Corpus) -> Result<Vec<TrainExample>> {
    questions
        .iter()
        .map(|q| {
            corpus.validate_question(q)?;
            Ok(TrainExample {
                query_tokens: q.tokens.clone(),
                positive_id: q.gold_hop1.clone(),
                hard_negative_ids: Vec::new(),
            })
        })
        .collect()
}

/// Second-hop instances: question tokens followed by the first gold's
/// tokens, positive = second gold. Comparison questions use the stored order.
pub fn build_dpr2_dataset(questions: &[Question], corpus: &Corpus) -> Result<Vec<TrainExample>> {
    questions
        .iter()
        .map(|q| {
            corpus.validate_question(q)?;
            let first = corpus.require(&q.gold_hop1)?;
            let mut query_tokens = q.tokens.clone();
            query_tokens.extend(first.tokens.iter().cloned());
            Ok(TrainExample {
                query_tokens,
                positive_id: q.gold_hop2.clone(),
                hard_negative_ids: Vec::new(),
            })
        })
        .collect()
}

/// Adds the top BM25 hit that is neither gold of the matching question as a
/// hard negative. `examples[i]` must come from `questions[i]`.
pub fn add_bm25_hard_negatives(
    examples: &mut [TrainExample],
    questions: &[Question],
    index: &InvertedIndex,
) -> Result<()> {
    if examples.len() != questions.len() {
        return Err(Error::InvalidArgument(
            "examples and questions must align".into(),
        ));
    }
    for (ex, q) in examples.iter_mut().zip(questions) {
        let hits = index.search(&ex.query_tokens, 3)?;
        if let Some(neg) = hits
            .into_iter()
            .find(|h| h.id != q.gold_hop1 && h.id != q.gold_hop2)
        {
            ex.hard_negative_ids = vec![neg.id];
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub learning_rate: f64,
    /// Heavy-ball momentum; 0 is plain SGD.
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 8,
            grad_accum_steps: 1,
            learning_rate: 0.5,
            momentum: 0.0,
            seed: 13,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.grad_accum_steps == 0 {
            return bad("gradient accumulation steps must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        Ok(())
    }
}

/// Featurized batch with its candidate list.
#[derive(Debug, Clone)]
pub struct Batch {
    queries: Vec<Features>,
    candidate_ids: Vec<String>,
    candidates: Vec<Features>,
    /// Candidate index of each example's positive.
    positives: Vec<usize>,
    hard_negatives: usize,
}

impl Batch {
    pub fn new(examples: &[TrainExample], corpus: &Corpus, enc: &ToyEncoder) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut candidate_ids: Vec<String> = Vec::new();
        let mut seen = HashSet::new();
        for ex in examples {
            if ex.hard_negative_ids.contains(&ex.positive_id) {
                return Err(Error::NegativeIsPositive(ex.positive_id.clone()));
            }
            if !seen.insert(ex.positive_id.as_str()) {
                return Err(Error::DuplicatePositive(ex.positive_id.clone()));
            }
            candidate_ids.push(ex.positive_id.clone());
        }
        let positives = (0..examples.len()).collect();
        for ex in examples {
            for neg in &ex.hard_negative_ids {
                if seen.insert(neg.as_str()) {
                    candidate_ids.push(neg.clone());
                }
            }
        }
        let hard_negatives = candidate_ids.len() - examples.len();
        let candidates = candidate_ids
            .iter()
            .map(|id| Ok(enc.featurize(&corpus.require(id)?.tokens)))
            .collect::<Result<Vec<_>>>()?;
        let queries = examples
            .iter()
            .map(|ex| enc.featurize(&ex.query_tokens))
            .collect();
        Ok(Batch {
            queries,
            candidate_ids,
            candidates,
            positives,
            hard_negatives,
        })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Size of the softmax each example is scored over.
    pub fn candidate_count(&self) -> usize {
        self.candidate_ids.len()
    }

    pub fn candidate_ids(&self) -> &[String] {
        &self.candidate_ids
    }

    /// Distinct hard negatives that are not also batch positives.
    pub fn hard_negative_count(&self) -> usize {
        self.hard_negatives
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub per_example: Vec<f64>,
}

/// Dense gradient in the encoder's feature-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub wq: Vec<f64>,
    pub wp: Vec<f64>,
}

impl Gradient {
    pub fn zeros(enc: &ToyEncoder) -> Self {
        let n = enc.hash_dim() * enc.embed_dim();
        Gradient {
            wq: vec![0.0; n],
            wp: vec![0.0; n],
        }
    }

    fn add(&mut self, other: &Gradient) {
        for (a, b) in self.wq.iter_mut().zip(&other.wq) {
            *a += b;
        }
        for (a, b) in self.wp.iter_mut().zip(&other.wp) {
            *a += b;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Forward {
    queries: Vec<Vec<f64>>,
    candidates: Vec<Vec<f64>>,
    /// Row-wise softmax over candidates.
    probs: Vec<Vec<f64>>,
    loss: BatchLoss,
}

fn forward(batch: &Batch, enc: &ToyEncoder, exec: Execution) -> Forward {
    let queries = par::map(exec, &batch.queries, |x| enc.project_query(x));
    let candidates = par::map(exec, &batch.candidates, |y| enc.project_passage(y));
    let rows = par::map_range(exec, queries.len(), |i| {
        let logits: Vec<f64> = candidates.iter().map(|c| dot(&queries[i], c)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let loss = max + sum.ln() - logits[batch.positives[i]];
        (
            loss.max(0.0),
            exps.into_iter().map(|e| e / sum).collect::<Vec<_>>(),
        )
    });
    let (per_example, probs): (Vec<f64>, Vec<Vec<f64>>) = rows.into_iter().unzip();
    let loss = per_example.iter().sum::<f64>() / per_example.len() as f64;
    Forward {
        queries,
        candidates,
        probs,
        loss: BatchLoss { loss, per_example },
    }
}

/// Mean in-batch negative log-likelihood.
pub fn nll_loss(batch: &Batch, enc: &ToyEncoder) -> BatchLoss {
    forward(batch, enc, Execution::Sequential).loss
}

/// Loss and its exact gradient with respect to `(W_q, W_p)`.
pub fn grad(batch: &Batch, enc: &ToyEncoder, exec: Execution) -> (BatchLoss, Gradient) {
    let f = forward(batch, enc, exec);
    let d = enc.embed_dim();
    let scale = 1.0 / batch.len() as f64;
    // dL/dlogit_ij = (softmax_ij − [j = pos_i]) / B
    let coeff: Vec<Vec<f64>> = f
        .probs
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut g: Vec<f64> = row.iter().map(|p| p * scale).collect();
            g[batch.positives[i]] -= scale;
            g
        })
        .collect();
    let d_queries = par::map_range(exec, f.queries.len(), |i| {
        let mut out = vec![0.0; d];
        for (g, c) in coeff[i].iter().zip(&f.candidates) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += g * v;
            }
        }
        out
    });
    let d_candidates = par::map_range(exec, f.candidates.len(), |j| {
        let mut out = vec![0.0; d];
        for (row, q) in coeff.iter().zip(&f.queries) {
            for (o, v) in out.iter_mut().zip(q) {
                *o += row[j] * v;
            }
        }
        out
    });
    let mut g = Gradient::zeros(enc);
    scatter(&mut g.wq, d, &batch.queries, &d_queries);
    scatter(&mut g.wp, d, &batch.candidates, &d_candidates);
    (f.loss, g)
}

/// `W[:, f] += x[f] · dv` for each input, in input order.
fn scatter(w: &mut [f64], d: usize, inputs: &[Features], grads: &[Vec<f64>]) {
    for (x, dv) in inputs.iter().zip(grads) {
        for (feat, v) in x.iter() {
            for (o, gv) in w[feat * d..(feat + 1) * d].iter_mut().zip(dv) {
                *o += v * gv;
            }
        }
    }
}

/// Largest entrywise relative error between [`grad`] and central finite
/// differences with step `h`, over every entry of `W_q` and `W_p`.
///
/// The error of an entry is `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps
/// entries whose true gradient is zero from dividing rounding noise by zero.
pub fn gradient_check(batch: &Batch, enc: &ToyEncoder, h: f64) -> f64 {
    let (_, g) = grad(batch, enc, Execution::Sequential);
    let mut probe = enc.clone();
    let mut worst = 0.0f64;
    for side in 0..2 {
        let analytic = if side == 0 { &g.wq } else { &g.wp };
        for (k, &a) in analytic.iter().enumerate() {
            let mut at = |delta: f64| {
                let (wq, wp) = probe.weights_mut();
                let w = if side == 0 { wq } else { wp };
                let orig = w[k];
                w[k] = orig + delta;
                let l = nll_loss(batch, &probe).loss;
                let (wq, wp) = probe.weights_mut();
                (if side == 0 { wq } else { wp })[k] = orig;
                l
            };
            let n = (at(h) - at(-h)) / (2.0 * h);
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-6));
        }
    }
    worst
}

/// SGD with gradient accumulation: [`accumulate`](Self::accumulate) up to
/// `S` batches, then [`apply`](Self::apply) the mean.
#[derive(Debug, Clone)]
pub struct Optimizer {
    learning_rate: f64,
    momentum: f64,
    pending: Option<Gradient>,
    pending_batches: usize,
    pending_loss: f64,
    velocity: Option<Gradient>,
}

impl Optimizer {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Optimizer {
            learning_rate,
            momentum,
            pending: None,
            pending_batches: 0,
            pending_loss: 0.0,
            velocity: None,
        }
    }

    pub fn pending_batches(&self) -> usize {
        self.pending_batches
    }

    pub fn accumulate(&mut self, batch: &Batch, enc: &ToyEncoder, exec: Execution) -> BatchLoss {
        let (loss, g) = grad(batch, enc, exec);
        match &mut self.pending {
            Some(acc) => acc.add(&g),
            None => self.pending = Some(g),
        }
        self.pending_batches += 1;
        self.pending_loss += loss.loss;
        loss
    }

    /// Updates `enc` with `η · mean` of the pending gradients and returns the
    /// mean pending loss, or `None` when nothing is pending.
    pub fn apply(&mut self, enc: &mut ToyEncoder) -> Option<f64> {
        let mut g = self.pending.take()?;
        let n = self.pending_batches as f64;
        let loss = self.pending_loss / n;
        self.pending_batches = 0;
        self.pending_loss = 0.0;
        for v in g.wq.iter_mut().chain(g.wp.iter_mut()) {
            *v /= n;
        }
        let step = if self.momentum > 0.0 {
            let vel = self.velocity.get_or_insert_with(|| Gradient::zeros(enc));
            for (v, gv) in vel
                .wq
                .iter_mut()
                .zip(&g.wq)
                .chain(vel.wp.iter_mut().zip(&g.wp))
            {
                *v = self.momentum * *v + gv;
            }
            vel.clone()
        } else {
            g
        };
        let (wq, wp) = enc.weights_mut();
        for (w, s) in wq
            .iter_mut()
            .zip(&step.wq)
            .chain(wp.iter_mut().zip(&step.wp))
        {
            *w -= self.learning_rate * s;
        }
        Some(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BatchStat {
    pub epoch: usize,
    pub step: usize,
    pub size: usize,
    pub candidates: usize,
    pub hard_negatives: usize,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub encoder: ToyEncoder,
    /// One record per optimizer step.
    pub losses: Vec<LossRecord>,
    pub epoch_mean_loss: Vec<f64>,
    pub batches: Vec<BatchStat>,
}

impl TrainReport {
    pub fn write_loss_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "epoch,step,loss")?;
        for r in &self.losses {
            writeln!(w, "{},{},{}", r.epoch, r.step, r.loss)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains `encoder` on `examples`.
///
/// Each epoch shuffles the examples with a generator seeded once from
/// `config.seed` and cuts them into batches of exactly `B`; a short final
/// batch is dropped so every batch has the same negative count. Every `S`
/// batches (and at the end of an epoch) the optimizer steps.
pub fn train(
    examples: &[TrainExample],
    corpus: &Corpus,
    mut encoder: ToyEncoder,
    config: &TrainConfig,
    exec: Execution,
) -> Result<TrainReport> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no training examples".into()));
    }
    if config.batch_size > examples.len() {
        return Err(Error::InvalidArgument(format!(
            "batch size {} exceeds {} examples",
            config.batch_size,
            examples.len()
        )));
    }
    let mut positives = HashSet::new();
    for ex in examples {
        if !positives.insert(ex.positive_id.as_str()) {
            return Err(Error::DuplicatePositive(ex.positive_id.clone()));
        }
        corpus.require(&ex.positive_id)?;
        for neg in &ex.hard_negative_ids {
            corpus.require(neg)?;
        }
    }

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut opt = Optimizer::new(config.learning_rate, config.momentum);
    let mut losses = Vec::new();
    let mut epoch_mean_loss = Vec::with_capacity(config.epochs);
    let mut batches = Vec::new();
    let mut step = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0;
        for chunk in order.chunks_exact(config.batch_size) {
            let members: Vec<TrainExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let batch = Batch::new(&members, corpus, &encoder)?;
            batches.push(BatchStat {
                epoch,
                step,
                size: batch.len(),
                candidates: batch.candidate_count(),
                hard_negatives: batch.hard_negative_count(),
            });
            epoch_loss += opt.accumulate(&batch, &encoder, exec).loss;
            epoch_batches += 1;
            if opt.pending_batches() == config.grad_accum_steps {
                let loss = opt.apply(&mut encoder).expect("pending batches");
                losses.push(LossRecord { epoch, step, loss });
                step += 1;
            }
        }
        if let Some(loss) = opt.apply(&mut encoder) {
            losses.push(LossRecord { epoch, step, loss });
            step += 1;
        }
        epoch_mean_loss.push(epoch_loss / epoch_batches as f64);
    }
    Ok(TrainReport {
        encoder,
        losses,
        epoch_mean_loss,
        batches,
    })
}

/// Fraction of examples whose positive is the top inner-product passage in the corpus.
pub fn accuracy_at_1(
    examples: &[TrainExample],
    corpus: &Corpus,
    enc: &ToyEncoder,
    exec: Execution,
) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let passages = par::try_map(exec, corpus.passages(), |p| enc.encode_passage(p))?;
    let hits = par::map(exec, examples, |ex| {
        let q = enc.encode_query_tokens(&ex.query_tokens);
        let best = passages
            .iter()
            .zip(corpus.passages())
            .map(|(v, p)| (dot(&q, v), p.id.as_str()))
            .max_by(|a, b| score_cmp(a.0, b.0).then_with(|| b.1.cmp(a.1)))
            .map(|(_, id)| id);
        best == Some(ex.positive_id.as_str())
    });
    Ok(hits.iter().filter(|&&h| h).count() as f64 / examples.len() as f64)
}
