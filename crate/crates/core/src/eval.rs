//! Filtered ranking metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triplet};
use crate::model::Model;
use crate::rules::{predict_batch, Query};

pub const HITS_AT: [usize; 3] = [1, 3, 10];
const EVAL_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn triplets(self, graph: &KnowledgeGraph) -> &[Triplet] {
        match self {
            Split::Train => graph.train(),
            Split::Valid => graph.valid(),
            Split::Test => graph.test(),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Query(format!("unknown split `{other}`"))),
        }
    }
}

/// Rank of `gold` among entities not in `filter`. Ties count half, i.e. the
/// expected rank under random tie-breaking.
pub fn filtered_rank(scores: &[f64], gold: usize, filter: &[usize]) -> Result<f64> {
    if gold >= scores.len() {
        return Err(Error::Query(format!(
            "gold entity {gold} outside {} scores",
            scores.len()
        )));
    }
    let mut filtered = vec![false; scores.len()];
    for &f in filter {
        if f < filtered.len() {
            filtered[f] = true;
        }
    }
    let s_gold = scores[gold];
    let mut higher = 0usize;
    let mut ties = 0usize;
    for (e, &s) in scores.iter().enumerate() {
        if e == gold || filtered[e] {
            continue;
        }
        if s > s_gold {
            higher += 1;
        } else if s == s_gold {
            ties += 1;
        }
    }
    Ok(1.0 + higher as f64 + ties as f64 / 2.0)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub queries: usize,
}

impl RankSummary {
    pub fn from_ranks(ranks: &[f64]) -> Self {
        let q = ranks.len();
        if q == 0 {
            return RankSummary::default();
        }
        let mrr = ranks.iter().map(|r| 1.0 / r).sum::<f64>() / q as f64;
        let hits = HITS_AT
            .iter()
            .map(|&k| (k, ranks.iter().filter(|&&r| r <= k as f64).count() as f64 / q as f64))
            .collect();
        RankSummary { mrr, hits, queries: q }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub queries: usize,
    pub per_relation: BTreeMap<String, RankSummary>,
    pub tie_policy: String,
    pub filtered: bool,
}

impl EvalReport {
    pub fn from_ranks(ranks: &[(usize, f64)], relation_names: &[String]) -> Self {
        let all: Vec<f64> = ranks.iter().map(|&(_, r)| r).collect();
        let overall = RankSummary::from_ranks(&all);
        let mut grouped: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for &(rel, r) in ranks {
            grouped.entry(rel).or_default().push(r);
        }
        let per_relation = grouped
            .into_iter()
            .map(|(rel, rs)| (relation_names[rel].clone(), RankSummary::from_ranks(&rs)))
            .collect();
        EvalReport {
            mrr: overall.mrr,
            hits: overall.hits,
            queries: overall.queries,
            per_relation,
            tie_policy: "mean".into(),
            filtered: true,
        }
    }

    pub fn hits_at(&self, k: usize) -> f64 {
        self.hits.get(&k).copied().unwrap_or(0.0)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<32} {:>7} {:>7} {:>7} {:>7} {:>7}", "relation", "queries", "MRR", "H@1", "H@3", "H@10").unwrap();
        for (name, s) in &self.per_relation {
            writeln!(
                out,
                "{:<32} {:>7} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
                name,
                s.queries,
                s.mrr,
                s.hits.get(&1).unwrap_or(&0.0),
                s.hits.get(&3).unwrap_or(&0.0),
                s.hits.get(&10).unwrap_or(&0.0)
            )
            .unwrap();
        }
        writeln!(
            out,
            "{:<32} {:>7} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
            "ALL",
            self.queries,
            self.mrr,
            self.hits_at(1),
            self.hits_at(3),
            self.hits_at(10)
        )
        .unwrap();
        out
    }
}

/// Filtered ranks of the tail query and the reverse head query of every
/// triplet in `split`, as `(query relation, rank)`.
pub fn rank_split(model: &Model, graph: &KnowledgeGraph, split: Split) -> Result<Vec<(usize, f64)>> {
    let lerp = model.lerp_matrix(graph)?;
    let mut queries = Vec::new();
    for t in split.triplets(graph) {
        queries.push(*t);
        queries.push(Triplet::new(t.tail, graph.reverse_of(t.relation), t.head));
    }
    let chunks: Vec<Result<Vec<(usize, f64)>>> = queries
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let qs: Vec<Query> = chunk.iter().map(|q| Query::new(q.head, q.relation)).collect();
            let scores = predict_batch(&model.store, &model.rules, &lerp, graph, &qs)?;
            chunk
                .iter()
                .enumerate()
                .map(|(c, q)| {
                    let column = scores.column_vec(c);
                    let filter: Vec<usize> = graph
                        .known_answers(q.head, q.relation)
                        .iter()
                        .copied()
                        .filter(|&e| e != q.tail)
                        .collect();
                    Ok((q.relation, filtered_rank(&column, q.tail, &filter)?))
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(queries.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

pub fn evaluate(model: &Model, graph: &KnowledgeGraph, split: Split) -> Result<EvalReport> {
    let ranks = rank_split(model, graph, split)?;
    Ok(EvalReport::from_ranks(&ranks, graph.relation_names()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        let s = [0.9, 0.5, 0.1];
        assert_eq!(filtered_rank(&s, 1, &[]).unwrap(), 2.0);
        assert_eq!(filtered_rank(&s, 1, &[0]).unwrap(), 1.0);
        assert_eq!(filtered_rank(&[0.5, 0.5, 0.5], 0, &[]).unwrap(), 2.0);
    }

    #[test]
    fn gold_out_of_range_is_an_error() {
        assert!(filtered_rank(&[0.1], 3, &[]).is_err());
    }

    #[test]
    fn summary_from_ranks() {
        let s = RankSummary::from_ranks(&[1.0, 2.0, 4.0]);
        assert!((s.mrr - (1.0 + 0.5 + 0.25) / 3.0).abs() < 1e-12);
        assert!((s.hits[&3] - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.hits[&1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.hits[&10], 1.0);
    }

    #[test]
    fn single_query_mrr_is_reciprocal_rank() {
        for r in [1.0, 2.5, 7.0] {
            assert_eq!(RankSummary::from_ranks(&[r]).mrr, 1.0 / r);
        }
    }
}
