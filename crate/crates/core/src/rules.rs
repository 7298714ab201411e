//! Probabilistic chain rules with LERP constraints.
//!
//! A rule for target relation `H` has `K` hops. Hop `k` picks a relation
//! through `softmax(a′[k])` and then constrains the reached entity with the
//! LERP row mixture `softmax(ρ′[k])`. Starting from the one-hot head entity,
//! scores are propagated left to right, so no `n × n` product is ever formed.
//! The rules of a target are summed.
//!
//! Batches are laid out one column per (query, rule) pair; the columns of a
//! query are contiguous.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::kg::{EdgeMask, KnowledgeGraph};
use crate::lerp::LerpMatrix;
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Query {
    pub head: usize,
    pub relation: usize,
}

impl Query {
    pub fn new(head: usize, relation: usize) -> Self {
        Query { head, relation }
    }
}

/// Per-target rule parameters. Every target has the same number of rules.
#[derive(Clone, Debug, PartialEq)]
pub struct RuleSet {
    hops: usize,
    rules_per_target: usize,
    relations: usize,
    lerp_rows: usize,
    hop_logits: Vec<Vec<ParamId>>,
    constraint_logits: Vec<Vec<ParamId>>,
    head_logits: Option<Vec<ParamId>>,
}

impl RuleSet {
    /// Allocates `rules_per_target` rules for each of `targets` relations.
    /// Hop logits are `rules × relations`, constraint logits
    /// `rules × lerp_rows`.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        targets: usize,
        rules_per_target: usize,
        hops: usize,
        relations: usize,
        lerp_rows: usize,
        constrain_head: bool,
        sigma: f64,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(hops >= 1, "rules need at least one hop");
        assert!(rules_per_target >= 1, "every target needs a rule");
        let normal = Normal::new(0.0, sigma).expect("valid sigma");
        let mut draw = |rows: usize, cols: usize| {
            Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| normal.sample(rng)).collect())
        };
        let mut hop_logits = Vec::with_capacity(targets);
        let mut constraint_logits = Vec::with_capacity(targets);
        let mut head_logits = constrain_head.then(Vec::new);
        for t in 0..targets {
            let mut hops_t = Vec::with_capacity(hops);
            let mut cons_t = Vec::with_capacity(hops);
            for k in 0..hops {
                hops_t.push(store.add(format!("rule.{t}.hop.{}", k + 1), draw(rules_per_target, relations)));
                cons_t.push(store.add(
                    format!("rule.{t}.constraint.{}", k + 1),
                    draw(rules_per_target, lerp_rows),
                ));
            }
            if let Some(heads) = head_logits.as_mut() {
                heads.push(store.add(format!("rule.{t}.constraint.0"), draw(rules_per_target, lerp_rows)));
            }
            hop_logits.push(hops_t);
            constraint_logits.push(cons_t);
        }
        RuleSet {
            hops,
            rules_per_target,
            relations,
            lerp_rows,
            hop_logits,
            constraint_logits,
            head_logits,
        }
    }

    pub fn hops(&self) -> usize {
        self.hops
    }

    pub fn rules_per_target(&self) -> usize {
        self.rules_per_target
    }

    pub fn targets(&self) -> usize {
        self.hop_logits.len()
    }

    pub fn relations(&self) -> usize {
        self.relations
    }

    pub fn lerp_rows(&self) -> usize {
        self.lerp_rows
    }

    pub fn constrains_head(&self) -> bool {
        self.head_logits.is_some()
    }

    /// Hop-`k` relation logits (`k` from 0) for all rules of `target`.
    pub fn hop_logits(&self, target: usize, k: usize) -> ParamId {
        self.hop_logits[target][k]
    }

    /// Constraint logits after hop `k` (`k` from 0) for all rules of `target`.
    pub fn constraint_logits(&self, target: usize, k: usize) -> ParamId {
        self.constraint_logits[target][k]
    }

    /// Constraint logits on the head entity, when enabled.
    pub fn head_constraint_logits(&self, target: usize) -> Option<ParamId> {
        self.head_logits.as_ref().map(|h| h[target])
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.hop_logits
            .iter()
            .flatten()
            .chain(self.constraint_logits.iter().flatten())
            .chain(self.head_logits.iter().flatten())
            .copied()
    }

    pub fn count_learnable_scalars(&self) -> usize {
        let per_rule = self.hops * (self.relations + self.lerp_rows)
            + if self.constrains_head() { self.lerp_rows } else { 0 };
        self.targets() * self.rules_per_target * per_rule
    }

    /// A single rule, for inspection.
    pub fn rule(&self, target: usize, index: usize) -> Rule<'_> {
        assert!(target < self.targets() && index < self.rules_per_target);
        Rule {
            set: self,
            target,
            index,
        }
    }
}

/// One rule of a [`RuleSet`].
#[derive(Clone, Copy, Debug)]
pub struct Rule<'a> {
    set: &'a RuleSet,
    pub target: usize,
    pub index: usize,
}

impl Rule<'_> {
    pub fn hops(&self) -> usize {
        self.set.hops
    }

    /// Relation logits of hop `k` (from 0).
    pub fn hop_logits<'s>(&self, store: &'s ParamStore, k: usize) -> &'s [f64] {
        store.value(self.set.hop_logits(self.target, k)).row_slice(self.index)
    }

    /// LERP-row logits of the constraint after hop `k` (from 0).
    pub fn constraint_logits<'s>(&self, store: &'s ParamStore, k: usize) -> &'s [f64] {
        store
            .value(self.set.constraint_logits(self.target, k))
            .row_slice(self.index)
    }

    pub fn head_constraint_logits<'s>(&self, store: &'s ParamStore) -> Option<&'s [f64]> {
        self.set
            .head_constraint_logits(self.target)
            .map(|id| store.value(id).row_slice(self.index))
    }
}

fn check_query(graph: &KnowledgeGraph, rules: &RuleSet, q: &Query) -> Result<()> {
    if q.head >= graph.num_entities() {
        return Err(Error::Query(format!(
            "entity id {} outside {} entities",
            q.head,
            graph.num_entities()
        )));
    }
    if q.relation >= rules.targets() {
        return Err(Error::Query(format!(
            "relation id {} is not a target relation (0..{})",
            q.relation,
            rules.targets()
        )));
    }
    Ok(())
}

/// Records the scores of `queries` on `tape`: an `n × |queries|` node whose
/// column `q` sums the selected rules of `queries[q].relation`, started from
/// `queries[q].head`. `only_rule` restricts every query to one rule index.
#[allow(clippy::too_many_arguments)]
pub fn score_queries<'g>(
    tape: &mut Tape<'g>,
    store: &ParamStore,
    rules: &RuleSet,
    lerp: NodeId,
    graph: &'g KnowledgeGraph,
    queries: &[Query],
    only_rule: Option<usize>,
    mask: Option<&'g EdgeMask>,
) -> Result<NodeId> {
    if queries.is_empty() {
        return Err(Error::Query("empty query batch".into()));
    }
    for q in queries {
        check_query(graph, rules, q)?;
    }
    if let Some(r) = only_rule {
        if r >= rules.rules_per_target {
            return Err(Error::Query(format!("rule index {r} out of range")));
        }
    }
    assert_eq!(rules.relations, graph.num_relations(), "rule set sized for a different graph");
    assert_eq!(tape.value(lerp).cols(), rules.lerp_rows, "LERP width does not match rules");

    // stacked coefficient rows: all rules of each distinct target, in target order
    let mut offsets = BTreeMap::new();
    for q in queries {
        offsets.entry(q.relation).or_insert(0);
    }
    for (i, off) in offsets.values_mut().enumerate() {
        *off = i * rules.rules_per_target;
    }
    let targets: Vec<usize> = offsets.keys().copied().collect();

    let rule_indices: Vec<usize> = match only_rule {
        Some(r) => vec![r],
        None => (0..rules.rules_per_target).collect(),
    };
    let mut heads = Vec::new();
    let mut col_map = Vec::new();
    let mut ranges: Vec<Range<usize>> = Vec::with_capacity(queries.len());
    for q in queries {
        let start = col_map.len();
        for &r in &rule_indices {
            heads.push(q.head);
            col_map.push(offsets[&q.relation] + r);
        }
        ranges.push(start..col_map.len());
    }

    let stacked = |tape: &mut Tape<'g>, pick: &dyn Fn(usize) -> ParamId| {
        let parts: Vec<NodeId> = targets
            .iter()
            .map(|&t| {
                let logits = tape.param(store, pick(t));
                tape.softmax(logits)
            })
            .collect();
        tape.stack_rows(&parts)
    };

    let constraint = |tape: &mut Tape<'g>, rows: NodeId| {
        let per_rule = tape.matmul_bt(lerp, rows);
        tape.gather_cols(per_rule, col_map.clone())
    };

    let mut state = None;
    if rules.constrains_head() {
        let rows = stacked(tape, &|t| rules.head_constraint_logits(t).unwrap());
        let head_mask = constraint(tape, rows);
        let mut start = Tensor::zeros(graph.num_entities(), heads.len());
        for (c, &h) in heads.iter().enumerate() {
            start.set(h, c, 1.0);
        }
        let start = tape.constant(start);
        state = Some(tape.hadamard(start, head_mask));
    }

    for k in 0..rules.hops {
        let coef = stacked(tape, &|t| rules.hop_logits(t, k));
        let moved = match state {
            None => tape.propagate_one_hot(heads.clone(), coef, col_map.clone(), graph, mask),
            Some(s) => tape.propagate(s, coef, col_map.clone(), graph, mask),
        };
        let rows = stacked(tape, &|t| rules.constraint_logits(t, k));
        let cons = constraint(tape, rows);
        state = Some(tape.hadamard(moved, cons));
    }

    Ok(tape.sum_col_ranges(state.expect("at least one hop"), ranges))
}

/// Scores of a single rule for the query `rule.target(head, ?)`.
pub fn evaluate_rule(
    store: &ParamStore,
    rules: &RuleSet,
    target: usize,
    index: usize,
    lerp: &LerpMatrix,
    graph: &KnowledgeGraph,
    head: usize,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let l = tape.constant(lerp.values().clone());
    let node = score_queries(
        &mut tape,
        store,
        rules,
        l,
        graph,
        &[Query::new(head, target)],
        Some(index),
        None,
    )?;
    Ok(tape.value(node).column_vec(0))
}

/// Summed scores of all rules of `query.relation`.
pub fn predict(
    store: &ParamStore,
    rules: &RuleSet,
    lerp: &LerpMatrix,
    graph: &KnowledgeGraph,
    query: Query,
) -> Result<Vec<f64>> {
    Ok(predict_batch(store, rules, lerp, graph, &[query])?.column_vec(0))
}

/// `n × |queries|` score matrix.
pub fn predict_batch(
    store: &ParamStore,
    rules: &RuleSet,
    lerp: &LerpMatrix,
    graph: &KnowledgeGraph,
    queries: &[Query],
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let l = tape.constant(lerp.values().clone());
    let node = score_queries(&mut tape, store, rules, l, graph, queries, None, None)?;
    Ok(tape.value(node).clone())
}
