use std::cmp::Ordering;

use serde::Serialize;

/// One entry of a ranked list.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranked {
    pub id: String,
    pub score: f64,
}

impl Ranked {
    pub fn new(id: impl Into<String>, score: f64) -> Self {
        Ranked {
            id: id.into(),
            score,
        }
    }
}

/// Numeric order in which `-0.0 == 0.0`; NaN sorts as in [`f64::total_cmp`].
pub fn score_cmp(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or_else(|| a.total_cmp(&b))
}

/// Descending score, then ascending id.
pub fn ranked_order(a: &Ranked, b: &Ranked) -> Ordering {
    score_cmp(b.score, a.score).then_with(|| a.id.cmp(&b.id))
}

pub fn sort_ranked(list: &mut [Ranked]) {
    list.sort_unstable_by(ranked_order);
}
