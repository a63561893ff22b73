//! Seeded synthetic data: a two-hop bridge corpus and a separable
//! query/passage matching task.
//!
//! In the bridge corpus every question names topic words found only in its
//! first-hop passage. The first-hop passage also mentions a bridge word,
//! which titles the second-hop passage. Second-hop passages share no token
//! with their question, so they are reachable only through the first hop.
//! Chain passages use chain-specific words only; shared filler words appear
//! in distractors.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngExt};
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::corpus::{Corpus, Passage, Question, QuestionType};
use crate::trainer::TrainExample;
use crate::Result;

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ze", "ba", "do", "fu", "ga", "hi", "jo", "ku",
    "le", "ma", "no", "pi", "qu", "re", "so", "tu",
];

struct Words {
    rng: Xoshiro256PlusPlus,
    used: HashSet<String>,
}

impl Words {
    fn fresh(&mut self) -> String {
        loop {
            let n = 3 + (self.rng.next_u32() % 2) as usize;
            let w: String = (0..n)
                .map(|_| SYLLABLES[(self.rng.next_u32() % 24) as usize])
                .collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn fresh_n(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.fresh()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BridgeConfig {
    pub train_questions: usize,
    pub test_questions: usize,
    pub distractors: usize,
    pub seed: u64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig {
            train_questions: 150,
            test_questions: 50,
            distractors: 100,
            seed: 13,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BridgeData {
    pub corpus: Corpus,
    pub train: Vec<Question>,
    pub test: Vec<Question>,
}

pub fn bridge_corpus(cfg: &BridgeConfig) -> Result<BridgeData> {
    let mut words = Words {
        rng: Xoshiro256PlusPlus::seed_from_u64(cfg.seed),
        used: HashSet::new(),
    };
    let filler = words.fresh_n(60);
    let chains = cfg.train_questions + cfg.test_questions;

    let mut passages = Vec::with_capacity(2 * chains + cfg.distractors);
    let mut questions = Vec::with_capacity(chains);
    let mut topics = Vec::with_capacity(chains);
    for i in 0..chains {
        let topic = words.fresh_n(3);
        let bridge = words.fresh();
        let facts = words.fresh_n(3);

        let mut body: Vec<String> = topic
            .iter()
            .cloned()
            .chain(vec![bridge.clone(); 3])
            .collect();
        body.extend(words.fresh_n(2));
        body.shuffle(&mut words.rng);
        let first = Passage::new(
            format!("h1-{i:04}"),
            format!("{} {}", topic[0], topic[1]),
            body.join(" "),
        );

        let mut body: Vec<String> = facts
            .iter()
            .cloned()
            .chain(vec![bridge.clone(); 2])
            .collect();
        body.extend(words.fresh_n(2));
        body.shuffle(&mut words.rng);
        let second = Passage::new(format!("h2-{i:04}"), bridge, body.join(" "));

        let text = format!("{} {} {}?", topic[0], topic[1], topic[2]);
        questions.push(Question::new(
            format!("q{i:04}"),
            text,
            QuestionType::Bridge,
            &first.id,
            &second.id,
        ));
        passages.push(first);
        passages.push(second);
        topics.push(topic);
    }

    for j in 0..cfg.distractors {
        let mut rng = words.rng.clone();
        let mut body: Vec<String> = (0..6)
            .map(|_| filler.choose(&mut rng).expect("filler").clone())
            .collect();
        if chains > 0 {
            let t = &topics[rng.random_range(0..chains)];
            body.push(t[rng.random_range(0..3)].clone());
        }
        words.rng = rng;
        body.extend(words.fresh_n(2));
        let title = words.fresh();
        passages.push(Passage::new(format!("d-{j:04}"), title, body.join(" ")));
    }
    passages.shuffle(&mut words.rng);

    let corpus = Corpus::from_passages(passages)?;
    let test = questions.split_off(cfg.train_questions);
    Ok(BridgeData {
        corpus,
        train: questions,
        test,
    })
}

/// `queries` examples, each with one token shared only with its positive,
/// among `passages ≥ queries` passages.
pub fn separable_task(
    queries: usize,
    passages: usize,
    seed: u64,
) -> Result<(Corpus, Vec<TrainExample>)> {
    let mut words = Words {
        rng: Xoshiro256PlusPlus::seed_from_u64(seed),
        used: HashSet::new(),
    };
    let filler = words.fresh_n(30);
    let mut out = Vec::with_capacity(passages);
    let mut examples = Vec::with_capacity(queries);
    for i in 0..passages.max(queries) {
        let key = words.fresh();
        let mut rng = words.rng.clone();
        let mut body: Vec<String> = (0..4)
            .map(|_| filler.choose(&mut rng).expect("filler").clone())
            .collect();
        words.rng = rng;
        body.push(key.clone());
        let id = format!("s{i:03}");
        if i < queries {
            let mut query = vec![key];
            query.push(filler.choose(&mut words.rng).expect("filler").clone());
            examples.push(TrainExample {
                query_tokens: query,
                positive_id: id.clone(),
                hard_negative_ids: Vec::new(),
            });
        }
        out.push(Passage::new(id, "", body.join(" ")));
    }
    Ok((Corpus::from_passages(out)?, examples))
}
