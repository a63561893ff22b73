use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hopwise::dense::DenseIndex;
use hopwise::encoder::{encode_corpus, to_f32, QueryEncoder, ToyEncoder};
use hopwise::lexical::InvertedIndex;
use hopwise::multihop::{Method, RetrievalParams, Retriever};
use hopwise::par::Execution;
use hopwise::rerank::OverlapScorer;
use hopwise::synth::{bridge_corpus, BridgeConfig, BridgeData};
use hopwise::trainer::{build_dpr2_dataset, grad, Batch};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn data() -> BridgeData {
    bridge_corpus(&BridgeConfig {
        train_questions: 400,
        test_questions: 100,
        distractors: 1000,
        seed: 1,
    })
    .unwrap()
}

fn dense_batch_search(c: &mut Criterion) {
    let data = data();
    let enc = ToyEncoder::new(4096, 64, 1).unwrap();
    let index = DenseIndex::new(encode_corpus(&enc, &data.corpus, Execution::Parallel).unwrap());
    let queries: Vec<Vec<f32>> = data
        .test
        .iter()
        .map(|q| to_f32(&enc.encode_query(q, None).unwrap()))
        .collect();
    let mut group = c.benchmark_group("dense_batch_search");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(index.batch_search(&queries, 20, &[], exec).unwrap()))
        });
    }
    group.finish();
}

fn encode_passages(c: &mut Criterion) {
    let data = data();
    let enc = ToyEncoder::new(4096, 64, 1).unwrap();
    let mut group = c.benchmark_group("encode_corpus");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(encode_corpus(&enc, &data.corpus, exec).unwrap()))
        });
    }
    group.finish();
}

fn batch_gradient(c: &mut Criterion) {
    let data = data();
    let enc = ToyEncoder::new(4096, 64, 1).unwrap();
    let examples = build_dpr2_dataset(&data.train, &data.corpus).unwrap();
    let batch = Batch::new(&examples[..64], &data.corpus, &enc).unwrap();
    let mut group = c.benchmark_group("grad_b64");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(grad(&batch, &enc, exec)))
        });
    }
    group.finish();
}

fn hybrid_run(c: &mut Criterion) {
    let data = data();
    let enc = ToyEncoder::new(4096, 64, 1).unwrap();
    let lexical = InvertedIndex::build(&data.corpus).unwrap();
    let dense = DenseIndex::new(encode_corpus(&enc, &data.corpus, Execution::Parallel).unwrap());
    let scorer = OverlapScorer::new(&lexical);
    let retriever = Retriever {
        corpus: &data.corpus,
        lexical: Some(&lexical),
        dense: Some(&dense),
        encoder: Some(&enc as &dyn QueryEncoder),
        scorer: Some(&scorer),
        params: RetrievalParams::default(),
    };
    let mut group = c.benchmark_group("retrieve_hybrid");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(retriever.run(Method::Hybrid, &data.test, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    dense_batch_search,
    encode_passages,
    batch_gradient,
    hybrid_run
);
criterion_main!(benches);
