//! Slow, exact reference semantics.
//!
//! Everything here enumerates assignments directly over the stored edges, so
//! it is only meant for tiny graphs. Reverse and identity relations are
//! ordinary relations to the oracle.

use crate::error::{Error, Result};
use crate::formula::Formula;
use crate::kg::KnowledgeGraph;

/// Truth of `f` at every entity. Each subformula is evaluated once for all
/// entities.
pub fn truth_vector(f: &Formula, graph: &KnowledgeGraph) -> Vec<bool> {
    let n = graph.num_entities();
    match f {
        Formula::True => vec![true; n],
        Formula::Chain(r, inner) => {
            let below = truth_vector(inner, graph);
            let mut out = vec![false; n];
            for (w, e) in graph.matrix(*r).entries() {
                if below[w] {
                    out[e] = true;
                }
            }
            out
        }
        Formula::Not(inner) => truth_vector(inner, graph).into_iter().map(|b| !b).collect(),
        Formula::And(a, b) => {
            let (a, b) = (truth_vector(a, graph), truth_vector(b, graph));
            a.iter().zip(&b).map(|(x, y)| *x && *y).collect()
        }
        Formula::Or(a, b) => {
            let (a, b) = (truth_vector(a, graph), truth_vector(b, graph));
            a.iter().zip(&b).map(|(x, y)| *x || *y).collect()
        }
    }
}

pub fn eval_tree_function(f: &Formula, graph: &KnowledgeGraph, e: usize) -> bool {
    truth_vector(f, graph)[e]
}

/// Direct recursive definition, no sharing. Exponential in depth.
pub fn eval_tree_function_reference(f: &Formula, graph: &KnowledgeGraph, e: usize) -> bool {
    match f {
        Formula::True => true,
        Formula::Chain(r, inner) => (0..graph.num_entities())
            .any(|w| graph.has_edge(*r, w, e) && eval_tree_function_reference(inner, graph, w)),
        Formula::Not(inner) => !eval_tree_function_reference(inner, graph, e),
        Formula::And(a, b) => {
            eval_tree_function_reference(a, graph, e) && eval_tree_function_reference(b, graph, e)
        }
        Formula::Or(a, b) => {
            eval_tree_function_reference(a, graph, e) || eval_tree_function_reference(b, graph, e)
        }
    }
}

/// Number of relation paths `x → … → y` following `chain`, for every `y`,
/// by enumerating all intermediate entities.
pub fn count_paths(graph: &KnowledgeGraph, chain: &[usize], x: usize) -> Vec<u64> {
    assert!(!chain.is_empty(), "chain must have at least one relation");
    let mut counts = vec![0u64; graph.num_entities()];
    fn walk(graph: &KnowledgeGraph, chain: &[usize], at: usize, counts: &mut [u64]) {
        let Some((&r, rest)) = chain.split_first() else {
            counts[at] += 1;
            return;
        };
        for next in 0..graph.num_entities() {
            if graph.has_edge(r, at, next) {
                walk(graph, rest, next, counts);
            }
        }
    }
    walk(graph, chain, x, &mut counts);
    counts
}

/// Entities `y` for which some assignment of the intermediate entities
/// satisfies every hop edge and every position constraint. `constraints[k]`
/// applies to the entity reached by hop `k`.
pub fn eval_extended_rule(
    graph: &KnowledgeGraph,
    chain: &[usize],
    constraints: &[Formula],
    head_constraint: Option<&Formula>,
    x: usize,
) -> Vec<bool> {
    assert_eq!(chain.len(), constraints.len(), "one constraint per hop");
    let n = graph.num_entities();
    let mut out = vec![false; n];
    if let Some(h) = head_constraint {
        if !eval_tree_function_reference(h, graph, x) {
            return out;
        }
    }
    let tables: Vec<Vec<bool>> = constraints.iter().map(|c| truth_vector(c, graph)).collect();
    fn walk(graph: &KnowledgeGraph, chain: &[usize], tables: &[Vec<bool>], at: usize, out: &mut [bool]) {
        let Some((&r, rest)) = chain.split_first() else {
            out[at] = true;
            return;
        };
        for next in 0..graph.num_entities() {
            if graph.has_edge(r, at, next) && tables[0][next] {
                walk(graph, rest, &tables[1..], next, out);
            }
        }
    }
    walk(graph, chain, &tables, x, &mut out);
    out
}

/// A chain rule with optional constraints for operation counting. `ops` is
/// the declared budget `D`: no constraint may have more than `D` nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct RuleSpec {
    pub chain: Vec<usize>,
    pub constraints: Vec<Option<Formula>>,
    pub ops: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OpCounter {
    pub multiplies: u64,
    pub n: usize,
    pub hops: usize,
    pub ops: usize,
}

impl OpCounter {
    /// `K (1 + D) n²`.
    pub fn bound(&self) -> u64 {
        (self.hops * (1 + self.ops) * self.n * self.n) as u64
    }

    pub fn within_bound(&self) -> bool {
        self.multiplies <= self.bound()
    }
}

/// Soft left-to-right evaluation of `spec` from `x` that counts scalar
/// multiplications: one per stored edge touched by a nonzero entry, `n` per
/// elementwise product. Returns the scores and the count, or a
/// [`Error::BoundViolation`] when the count exceeds `K (1 + D) n²`.
pub fn measure_ops(graph: &KnowledgeGraph, spec: &RuleSpec, x: usize) -> Result<(Vec<f64>, OpCounter)> {
    assert_eq!(spec.chain.len(), spec.constraints.len(), "one constraint slot per hop");
    for c in spec.constraints.iter().flatten() {
        assert!(c.size() <= spec.ops, "constraint larger than the declared budget");
    }
    let n = graph.num_entities();
    let mut count = 0u64;
    let mut state = vec![0.0; n];
    state[x] = 1.0;
    for (&r, c) in spec.chain.iter().zip(&spec.constraints) {
        state = spread(graph, r, &state, &mut count);
        if let Some(f) = c {
            let mask = soft_function(f, graph, &mut count);
            for (s, m) in state.iter_mut().zip(&mask) {
                *s *= m;
            }
            count += n as u64;
        }
    }
    let counter = OpCounter {
        multiplies: count,
        n,
        hops: spec.chain.len(),
        ops: spec.ops,
    };
    if !counter.within_bound() {
        return Err(Error::BoundViolation {
            count: counter.multiplies,
            bound: counter.bound(),
            hops: counter.hops,
            budget: counter.ops,
            n,
        });
    }
    Ok((state, counter))
}

fn spread(graph: &KnowledgeGraph, r: usize, v: &[f64], count: &mut u64) -> Vec<f64> {
    let m = graph.matrix(r);
    let mut out = vec![0.0; v.len()];
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        for k in m.row_range(i) {
            out[m.col_indices()[k]] += vi * m.values()[k];
            *count += 1;
        }
    }
    out
}

/// Soft truth values with clamped chaining, the operator semantics of the
/// LERP grid.
fn soft_function(f: &Formula, graph: &KnowledgeGraph, count: &mut u64) -> Vec<f64> {
    let n = graph.num_entities();
    match f {
        Formula::True => vec![1.0; n],
        Formula::Chain(r, inner) => {
            let below = soft_function(inner, graph, count);
            spread(graph, *r, &below, count)
                .into_iter()
                .map(|s| -(-s).exp_m1())
                .collect()
        }
        Formula::Not(inner) => soft_function(inner, graph, count).into_iter().map(|v| 1.0 - v).collect(),
        Formula::And(a, b) => {
            let (a, b) = (soft_function(a, graph, count), soft_function(b, graph, count));
            *count += n as u64;
            a.iter().zip(&b).map(|(x, y)| x * y).collect()
        }
        Formula::Or(a, b) => {
            let (a, b) = (soft_function(a, graph, count), soft_function(b, graph, count));
            *count += n as u64;
            a.iter().zip(&b).map(|(x, y)| 1.0 - (1.0 - x) * (1.0 - y)).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Triplet;

    fn chain_graph() -> KnowledgeGraph {
        // a=0 → b=1 → c=2 under relation 0, d=3 isolated
        KnowledgeGraph::from_triplets(
            4,
            1,
            vec![Triplet::new(0, 0, 1), Triplet::new(1, 0, 2)],
        )
        .unwrap()
    }

    #[test]
    fn path_counts() {
        let g = chain_graph();
        assert_eq!(count_paths(&g, &[0, 0], 0), vec![0, 0, 1, 0]);
        let diamond = KnowledgeGraph::from_triplets(
            4,
            1,
            vec![
                Triplet::new(0, 0, 1),
                Triplet::new(0, 0, 3),
                Triplet::new(1, 0, 2),
                Triplet::new(3, 0, 2),
            ],
        )
        .unwrap();
        assert_eq!(count_paths(&diamond, &[0, 0], 0), vec![0, 0, 2, 0]);
        let empty = KnowledgeGraph::from_triplets(3, 2, vec![Triplet::new(0, 0, 1)]).unwrap();
        assert_eq!(count_paths(&empty, &[0, 1], 0), vec![0, 0, 0]);
    }

    #[test]
    fn tree_function_examples() {
        let g = chain_graph();
        assert!(eval_tree_function(&Formula::True, &g, 3));
        // ∃z: r(z, e) holds at b but not at a
        let f = Formula::chain(0, Formula::True);
        assert!(eval_tree_function(&f, &g, 1));
        assert!(!eval_tree_function(&f, &g, 0));
        // reverse: ∃z: r(e, z) holds at a
        let f = Formula::chain(1, Formula::True);
        assert!(eval_tree_function(&f, &g, 0));
        let isolated = Formula::not(Formula::chain(0, Formula::True));
        assert!(eval_tree_function(&isolated, &g, 3));
    }

    #[test]
    fn rule_examples() {
        let g = chain_graph();
        let t = [Formula::True, Formula::True];
        assert_eq!(eval_extended_rule(&g, &[0, 0], &t, None, 0), vec![false, false, true, false]);
        let never = [Formula::True, Formula::not(Formula::True)];
        assert!(eval_extended_rule(&g, &[0, 0], &never, None, 0).iter().all(|&b| !b));
        let head = Formula::chain(0, Formula::True);
        assert!(eval_extended_rule(&g, &[0, 0], &t, Some(&head), 0).iter().all(|&b| !b));
    }

    #[test]
    fn single_matvec_on_complete_graph_meets_bound() {
        let n = 10;
        let mut edges = Vec::new();
        for a in 0..n {
            for b in 0..n {
                edges.push(Triplet::new(a, 0, b));
            }
        }
        let g = KnowledgeGraph::from_triplets(n, 1, edges).unwrap();
        let spec = RuleSpec {
            chain: vec![0],
            constraints: vec![None],
            ops: 0,
        };
        let (scores, c) = measure_ops(&g, &spec, 3).unwrap();
        assert!(c.multiplies <= 100);
        assert!(scores.iter().all(|&s| s == 1.0));
    }
}
