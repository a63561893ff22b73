use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hopwise::corpus::{load_questions, write_questions, Corpus, Question};
use hopwise::dense::DenseIndex;
use hopwise::encoder::{
    encode_corpus, encode_questions, EmbeddingMatrix, PrecomputedQueries, QueryEncoder, ToyEncoder,
    DEFAULT_EMBED_DIM, DEFAULT_HASH_DIM,
};
use hopwise::eval::{compare_runs, evaluate, Category, Run, DEFAULT_KS};
use hopwise::lexical::{Bm25Params, InvertedIndex};
use hopwise::multihop::{save_paths, write_run, HybridConfig, Method, RetrievalParams, Retriever};
use hopwise::par::Execution;
use hopwise::rerank::{ExternalScores, OverlapScorer, Scorer, DEFAULT_CANDIDATES};
use hopwise::synth::{bridge_corpus, BridgeConfig};
use hopwise::trainer::{
    add_bm25_hard_negatives, build_dpr2_dataset, build_hop1_dataset, train, TrainConfig,
    TrainExample,
};

/// Two-hop passage retrieval: indexing, training, retrieval and evaluation.
#[derive(Parser)]
#[command(name = "hopwise", version)]
struct Cli {
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a passage file (and optionally a question file) and report corpus statistics.
    Ingest(IngestArgs),
    /// Build a BM25 index.
    IndexLexical(IndexArgs),
    /// Encode passages, or hop-1 questions, with a checkpoint into an HSEM1 file.
    Embed(EmbedArgs),
    /// Train the toy dual encoder with in-batch negatives.
    Train(TrainArgs),
    /// Retrieve passages for every question and write a run file.
    Retrieve(RetrieveArgs),
    /// Score a run file with passage EM@k.
    Eval(EvalArgs),
    /// Bucket questions by which of two runs gets EM@k.
    Compare(CompareArgs),
    /// Generate a seeded synthetic two-hop bridge dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    questions: Option<PathBuf>,
    /// Write the statistics JSON here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    k1: f64,
    #[arg(long, default_value_t = 0.4)]
    b: f64,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Encode these questions (hop-1 queries) instead of the passages.
    #[arg(long)]
    questions: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dataset {
    /// Question → first gold passage.
    Hop1,
    /// Question plus first gold → second gold.
    Dpr2,
    /// Union of hop1 and dpr2, for a shared multi-hop encoder.
    Both,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    questions: PathBuf,
    #[arg(long, value_enum)]
    dataset: Dataset,
    /// Output checkpoint (HSCK1).
    #[arg(long)]
    out: PathBuf,
    /// Write the loss trace as `epoch,step,loss` CSV.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// Add the top non-gold BM25 hit of each example as a hard negative.
    #[arg(long)]
    hard_negatives: bool,
    /// Start from this checkpoint instead of a fresh encoder.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_HASH_DIM)]
    hash_dim: usize,
    #[arg(long, default_value_t = DEFAULT_EMBED_DIM)]
    dim: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    /// Gradient accumulation steps per update.
    #[arg(long, default_value_t = 1)]
    accum_steps: usize,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
    /// Seeds both initialization and shuffling.
    #[arg(long, default_value_t = 13)]
    seed: u64,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    questions: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// BM25 index (bm25, rerank, hybrid).
    #[arg(long)]
    index: Option<PathBuf>,
    /// Passage embeddings (dpr, mdr, hybrid); computed from --checkpoint when absent.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Query encoder checkpoint (dpr, mdr, hybrid).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Precomputed query vectors instead of a checkpoint; hop-2 rows are keyed `qid::pid`.
    #[arg(long, conflicts_with = "checkpoint")]
    query_embeddings: Option<PathBuf>,
    /// External reranker scores, `question_id \t passage_id \t score`; default is IDF overlap.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Write beam paths as JSONL (mdr, hybrid).
    #[arg(long)]
    paths_out: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    beam: usize,
    #[arg(long, default_value_t = 10)]
    b1: usize,
    #[arg(long, default_value_t = 10)]
    b2: usize,
    #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
    k_candidates: usize,
    /// Run tag written in the last column; defaults to the method name.
    #[arg(long)]
    tag: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Bm25,
    Rerank,
    Dpr,
    Mdr,
    Hybrid,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Bm25 => Method::Bm25,
            MethodArg::Rerank => Method::Rerank,
            MethodArg::Dpr => Method::Dpr,
            MethodArg::Mdr => Method::Mdr,
            MethodArg::Hybrid => Method::Hybrid,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    questions: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    ks: Vec<usize>,
    /// Write the full JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    run_a: PathBuf,
    #[arg(long)]
    run_b: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    questions: PathBuf,
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Write `question_id \t category` lines here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for corpus.jsonl, train.jsonl and test.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 150)]
    train_questions: usize,
    #[arg(long, default_value_t = 50)]
    test_questions: usize,
    #[arg(long, default_value_t = 100)]
    distractors: usize,
    #[arg(long, default_value_t = 13)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match run(cli.command, exec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hopwise: error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command, exec: Execution) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::IndexLexical(a) => index_lexical(a),
        Command::Embed(a) => embed(a, exec),
        Command::Train(a) => train_cmd(a, exec),
        Command::Retrieve(a) => retrieve(a, exec),
        Command::Eval(a) => eval_cmd(a),
        Command::Compare(a) => compare(a),
        Command::Synth(a) => synth(a),
    }
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::load_jsonl(path).with_context(|| format!("reading passages {}", path.display()))
}

fn load_qs(path: &Path, corpus: &Corpus) -> Result<Vec<Question>> {
    load_questions(path, corpus).with_context(|| format!("reading questions {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn ingest(a: IngestArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let stats = corpus.stats();
    let mut report = serde_json::json!({ "corpus": stats });
    if let Some(q) = &a.questions {
        report["questions"] = load_qs(q, &corpus)?.len().into();
    }
    let text = serde_json::to_string_pretty(&report)? + "\n";
    if let Some(out) = &a.out {
        fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    }
    print!("{text}");
    Ok(())
}

fn index_lexical(a: IndexArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let index = InvertedIndex::build_with(&corpus, Bm25Params { k1: a.k1, b: a.b })?;
    index
        .save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!(
        "indexed {} passages, {} terms",
        index.passage_count(),
        index.vocab_size()
    );
    Ok(())
}

fn load_encoder(path: &Path) -> Result<ToyEncoder> {
    Ok(ToyEncoder::load_checkpoint(path)
        .with_context(|| format!("reading checkpoint {}", path.display()))?
        .0)
}

fn embed(a: EmbedArgs, exec: Execution) -> Result<()> {
    let enc = load_encoder(&a.checkpoint)?;
    let corpus = load_corpus(&a.corpus)?;
    let matrix = match &a.questions {
        Some(q) => encode_questions(&enc, &load_qs(q, &corpus)?, exec)?,
        None => encode_corpus(&enc, &corpus, exec)?,
    };
    matrix
        .save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {} rows of dimension {}", matrix.len(), matrix.dim());
    Ok(())
}

fn train_cmd(a: TrainArgs, exec: Execution) -> Result<()> {
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        grad_accum_steps: a.accum_steps,
        learning_rate: a.lr,
        momentum: a.momentum,
        seed: a.seed,
    };
    config.validate()?;
    let corpus = load_corpus(&a.corpus)?;
    let questions = load_qs(&a.questions, &corpus)?;
    let hop1 = || build_hop1_dataset(&questions, &corpus);
    let dpr2 = || build_dpr2_dataset(&questions, &corpus);
    let index = if a.hard_negatives {
        Some(InvertedIndex::build(&corpus)?)
    } else {
        None
    };
    let with_negatives = |mut ex: Vec<TrainExample>| -> Result<Vec<TrainExample>> {
        if let Some(index) = &index {
            add_bm25_hard_negatives(&mut ex, &questions, index)?;
        }
        Ok(ex)
    };
    let examples = match a.dataset {
        Dataset::Hop1 => with_negatives(hop1()?)?,
        Dataset::Dpr2 => with_negatives(dpr2()?)?,
        Dataset::Both => {
            let mut ex = with_negatives(hop1()?)?;
            ex.extend(with_negatives(dpr2()?)?);
            ex
        }
    };
    let encoder = match &a.init {
        Some(path) => load_encoder(path)?,
        None => ToyEncoder::new(a.hash_dim, a.dim, a.seed)?,
    };
    let report = train(&examples, &corpus, encoder, &config, exec)?;
    for (epoch, loss) in report.epoch_mean_loss.iter().enumerate() {
        eprintln!("epoch {epoch}: mean loss {loss:.6}");
    }
    let dataset = match a.dataset {
        Dataset::Hop1 => "hop1",
        Dataset::Dpr2 => "dpr2",
        Dataset::Both => "both",
    };
    let echo = serde_json::json!({ "dataset": dataset, "hard_negatives": a.hard_negatives, "train": config });
    report
        .encoder
        .save_checkpoint(&a.out, &echo.to_string())
        .with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(path) = &a.loss_csv {
        report
            .write_loss_csv(path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn retrieve(a: RetrieveArgs, exec: Execution) -> Result<()> {
    let method = Method::from(a.method);
    let params = RetrievalParams {
        k: a.k,
        beam: a.beam,
        hybrid: HybridConfig {
            b1: a.b1,
            b2: a.b2,
            k_candidates: a.k_candidates,
        },
    };
    let lexical_needed = matches!(method, Method::Bm25 | Method::Rerank | Method::Hybrid);
    let dense_needed = matches!(method, Method::Dpr | Method::Mdr | Method::Hybrid);
    if lexical_needed && a.index.is_none() {
        bail!("--method {method} requires --index");
    }
    if dense_needed && a.checkpoint.is_none() && a.query_embeddings.is_none() {
        bail!("--method {method} requires --checkpoint or --query-embeddings");
    }
    if dense_needed && a.embeddings.is_none() && a.checkpoint.is_none() {
        bail!("--method {method} requires --embeddings when no --checkpoint is given");
    }

    let corpus = load_corpus(&a.corpus)?;
    let questions = load_qs(&a.questions, &corpus)?;
    let lexical = match (&a.index, lexical_needed) {
        (Some(p), true) => {
            Some(InvertedIndex::load(p).with_context(|| format!("reading index {}", p.display()))?)
        }
        _ => None,
    };
    let toy = match (&a.checkpoint, dense_needed) {
        (Some(p), true) => Some(load_encoder(p)?),
        _ => None,
    };
    let precomputed = match (&a.query_embeddings, dense_needed) {
        (Some(p), true) => Some(PrecomputedQueries::new(
            EmbeddingMatrix::load(p)
                .with_context(|| format!("reading query embeddings {}", p.display()))?,
        )),
        _ => None,
    };
    let dense = if dense_needed {
        let matrix = match (&a.embeddings, &toy) {
            (Some(p), _) => EmbeddingMatrix::load(p)
                .with_context(|| format!("reading embeddings {}", p.display()))?,
            (None, Some(enc)) => encode_corpus(enc, &corpus, exec)?,
            (None, None) => unreachable!("checked above"),
        };
        Some(DenseIndex::new(matrix))
    } else {
        None
    };
    let external = match &a.scores {
        Some(p) => Some(
            ExternalScores::load_tsv(p)
                .with_context(|| format!("reading scores {}", p.display()))?,
        ),
        None => None,
    };
    let overlap = lexical.as_ref().map(OverlapScorer::new);
    let scorer: Option<&dyn Scorer> = match (&external, &overlap) {
        (Some(e), _) => Some(e),
        (None, Some(o)) => Some(o),
        (None, None) => None,
    };
    let encoder: Option<&dyn QueryEncoder> = match (&toy, &precomputed) {
        (Some(t), _) => Some(t),
        (None, Some(p)) => Some(p),
        (None, None) => None,
    };
    let retriever = Retriever {
        corpus: &corpus,
        lexical: lexical.as_ref(),
        dense: dense.as_ref(),
        encoder,
        scorer,
        params,
    };
    let results = retriever.run(method, &questions, exec)?;

    let tag = a.tag.unwrap_or_else(|| method.to_string());
    let mut w = create(&a.out)?;
    write_run(&mut w, &results, &tag)?;
    w.flush()?;
    if let Some(p) = &a.paths_out {
        save_paths(p, &results).with_context(|| format!("writing {}", p.display()))?;
    }
    eprintln!("retrieved for {} questions with {method}", results.len());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let questions = load_qs(&a.questions, &corpus)?;
    let run = Run::load(&a.run).with_context(|| format!("reading run {}", a.run.display()))?;
    let report = evaluate(&run, &questions, &a.ks)?;
    if let Some(out) = &a.out {
        fs::write(out, report.to_json()).with_context(|| format!("writing {}", out.display()))?;
    }
    print!("{}", report.table());
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let questions = load_qs(&a.questions, &corpus)?;
    let load = |p: &Path| Run::load(p).with_context(|| format!("reading run {}", p.display()));
    let cats = compare_runs(&load(&a.run_a)?, &load(&a.run_b)?, &questions, a.k)?;
    if let Some(out) = &a.out {
        let mut w = create(out)?;
        for (q, c) in &cats {
            writeln!(w, "{q}\t{}", c.as_str())?;
        }
        w.flush()?;
    }
    for cat in [
        Category::AOnly,
        Category::BOnly,
        Category::Both,
        Category::Neither,
    ] {
        println!(
            "{}\t{}",
            cat.as_str(),
            cats.iter().filter(|(_, c)| *c == cat).count()
        );
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let data = bridge_corpus(&BridgeConfig {
        train_questions: a.train_questions,
        test_questions: a.test_questions,
        distractors: a.distractors,
        seed: a.seed,
    })?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    data.corpus.write_jsonl(a.out_dir.join("corpus.jsonl"))?;
    write_questions(a.out_dir.join("train.jsonl"), &data.train)?;
    write_questions(a.out_dir.join("test.jsonl"), &data.test)?;
    eprintln!(
        "wrote {} passages, {} train and {} test questions to {}",
        data.corpus.len(),
        data.train.len(),
        data.test.len(),
        a.out_dir.display()
    );
    Ok(())
}
