//! Exact maximum-inner-product search.

use std::collections::{HashMap, HashSet};

use crate::encoder::EmbeddingMatrix;
use crate::par::{self, Execution};
use crate::rank::{ranked_order, sort_ranked, Ranked};
use crate::{Error, Result};

/// Inner product accumulated in `f64`, in index order.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

#[derive(Debug, Clone)]
pub struct DenseIndex {
    matrix: EmbeddingMatrix,
    rows: HashMap<String, usize>,
}

impl DenseIndex {
    pub fn new(matrix: EmbeddingMatrix) -> Self {
        let rows = matrix
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        DenseIndex { matrix, rows }
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn len(&self) -> usize {
        self.matrix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.is_empty()
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.rows.get(id).map(|&i| self.matrix.row(i))
    }

    /// Top-`k` rows by inner product with `query`, descending, ties by
    /// ascending id. Ids in `exclude` are never returned.
    pub fn search(
        &self,
        query: &[f32],
        k: usize,
        exclude: &HashSet<String>,
    ) -> Result<Vec<Ranked>> {
        if query.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: query.len(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let mut hits: Vec<Ranked> = self
            .matrix
            .rows()
            .filter(|(id, _)| !exclude.contains(*id))
            .map(|(id, row)| Ranked::new(id, dot(query, row)))
            .collect();
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, ranked_order);
            hits.truncate(k);
        }
        sort_ranked(&mut hits);
        Ok(hits)
    }

    /// Runs [`search`](Self::search) for each query row. `excludes` is either
    /// empty (no exclusions) or has one set per query.
    pub fn batch_search(
        &self,
        queries: &[Vec<f32>],
        k: usize,
        excludes: &[HashSet<String>],
        exec: Execution,
    ) -> Result<Vec<Vec<Ranked>>> {
        if !excludes.is_empty() && excludes.len() != queries.len() {
            return Err(Error::InvalidArgument(format!(
                "{} exclude sets for {} queries",
                excludes.len(),
                queries.len()
            )));
        }
        let none = HashSet::new();
        par::try_map(exec, &(0..queries.len()).collect::<Vec<_>>(), |&i| {
            self.search(&queries[i], k, excludes.get(i).unwrap_or(&none))
        })
    }
}
