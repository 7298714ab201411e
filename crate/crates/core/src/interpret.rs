//! Hard decoding of trained parameters into readable rules and functions.
//!
//! Every soft choice (operator, relation, merge partner, constraint row) is
//! replaced by its argmax. The weight of a decoded object is the product of
//! the probabilities of all argmax choices it depends on.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::formula::{render, Formula, RelationVocab};
use crate::kg::KnowledgeGraph;
use crate::lerp::{LerpMatrix, LerpParams, Operator, NUM_OPERATORS};
use crate::model::Model;
use crate::param::{ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::softmax_in_place;
use crate::util::write_atomic;

/// Header line of rule and function dumps.
pub const WEIGHT_HEADER: &str =
    "# weight = joint probability of the argmax choices (relations, operators, partners, constraint rows)";

/// Argmax of `softmax(logits)` and its probability. Ties go to the first.
pub fn argmax_prob(logits: &[f64]) -> (usize, f64) {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    (best, p[best])
}

fn row(store: &ParamStore, id: ParamId, r: usize) -> &[f64] {
    store.value(id).row_slice(r)
}

/// Decodes grid cell `(j, i)`.
pub fn decode_cell(store: &ParamStore, params: &LerpParams, identity: usize, j: usize, i: usize) -> (Formula, f64) {
    if j == 0 {
        return (Formula::True, 1.0);
    }
    let chain = |weight: f64| {
        let (r, p) = argmax_prob(row(store, params.chain_logits(j), i));
        let (inner, w) = decode_cell(store, params, identity, j - 1, i);
        // chaining the identity is a no-op
        let f = if r == identity { inner } else { Formula::chain(r, inner) };
        (f, weight * p * w)
    };
    if j == 1 {
        return chain(1.0);
    }
    let (op, p_op) = argmax_prob(row(store, params.op_logits(j), i));
    debug_assert!(op < NUM_OPERATORS);
    match Operator::from_index(op) {
        Operator::True => (Formula::True, p_op),
        Operator::Chaining => chain(p_op),
        Operator::Negation => {
            let (f, w) = decode_cell(store, params, identity, j - 1, i);
            (Formula::not(f), p_op * w)
        }
        Operator::Copy => {
            let (f, w) = decode_cell(store, params, identity, j - 1, i);
            (f, p_op * w)
        }
        Operator::And | Operator::Or => {
            let logits = if op == Operator::And.index() {
                params.and_logits(j)
            } else {
                params.or_logits(j)
            };
            let (k, p_k) = argmax_prob(row(store, logits, i));
            let (a, wa) = decode_cell(store, params, identity, j - 1, i);
            let (b, wb) = decode_cell(store, params, identity, j - 1, k);
            let f = if op == Operator::And.index() {
                Formula::and(a, b)
            } else {
                Formula::or(a, b)
            };
            (f, p_op * p_k * wa * wb)
        }
    }
}

/// Function behind LERP row `i`: a grid cell of the last column for
/// `i < m`, `true` for the extra row `m`.
pub fn decode_lerp_row(store: &ParamStore, params: &LerpParams, identity: usize, i: usize) -> (Formula, f64) {
    if i == params.width() {
        (Formula::True, 1.0)
    } else {
        decode_cell(store, params, identity, params.depth(), i)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodedFunction {
    /// LERP row it was first decoded from.
    pub row: usize,
    pub weight: f64,
    pub formula: Formula,
}

/// All last-column functions, duplicates (up to ∧/∨ commutativity) merged
/// keeping the highest weight, sorted by descending weight.
pub fn decode_lerp(store: &ParamStore, params: &LerpParams, identity: usize) -> Vec<DecodedFunction> {
    let mut best: HashMap<Formula, DecodedFunction> = HashMap::new();
    for i in 0..params.width() {
        let (f, weight) = decode_cell(store, params, identity, params.depth(), i);
        let key = f.canonical();
        let entry = best.entry(key.clone()).or_insert(DecodedFunction {
            row: i,
            weight,
            formula: key,
        });
        if weight > entry.weight {
            entry.weight = weight;
            entry.row = i;
        }
    }
    let mut out: Vec<DecodedFunction> = best.into_values().collect();
    out.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.row.cmp(&b.row)));
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodedRule {
    pub target: usize,
    pub index: usize,
    /// Relation of every hop, identity hops included.
    pub hops: Vec<usize>,
    /// Constraint on the entity reached by each hop.
    pub constraints: Vec<Formula>,
    pub head_constraint: Option<Formula>,
    pub weight: f64,
}

impl DecodedRule {
    /// Hops with the identity removed.
    pub fn chain(&self, identity: usize) -> Vec<usize> {
        self.hops.iter().copied().filter(|&r| r != identity).collect()
    }

    pub fn is_negation_free(&self) -> bool {
        !self.constraints.iter().chain(&self.head_constraint).any(Formula::has_negation)
    }

    /// Renders e.g. `(∄z₂: sister(z₂,x)) ∧ mother(z₁,x) ⇒ brother(x,z₁)`.
    pub fn render(&self, vocab: &RelationVocab) -> String {
        let identity = vocab.identity();
        let hops = self.chain(identity).len();
        let name = |step: usize| -> String {
            if step == 0 {
                "x".into()
            } else if step == hops {
                "y".into()
            } else {
                crate::formula::var(step)
            }
        };
        let first_bound = hops.max(1);
        let mut body = Vec::new();
        let constrain = |f: &Formula, v: &str, body: &mut Vec<String>| {
            let text = format!("({})", render(f, vocab, v, first_bound));
            if *f != Formula::True && !body.contains(&text) {
                body.push(text);
            }
        };
        if let Some(h) = &self.head_constraint {
            constrain(h, "x", &mut body);
        }
        let mut step = 0;
        for (r, c) in self.hops.iter().zip(&self.constraints) {
            if *r != identity {
                body.push(vocab.atom(*r, &name(step), &name(step + 1)));
                step += 1;
            }
            constrain(c, &name(step), &mut body);
        }
        let (x, y) = if hops == 0 { ("x", "x") } else { ("x", "y") };
        if body.is_empty() {
            body.push("true".into());
        }
        format!("{} ⇒ {}", body.join(" ∧ "), vocab.atom(self.target, x, y))
    }
}

/// Hard decoding of one rule.
pub fn decode_rule(model: &Model, target: usize, index: usize) -> DecodedRule {
    let store = &model.store;
    let rule = model.rules.rule(target, index);
    let identity = model.relation_names().len() - 1;
    let constraint = |logits: &[f64]| {
        let (row, p) = argmax_prob(logits);
        let (f, w) = decode_lerp_row(store, &model.lerp, identity, row);
        (f, p * w)
    };
    let mut weight = 1.0;
    let mut hops = Vec::with_capacity(rule.hops());
    let mut constraints = Vec::with_capacity(rule.hops());
    for k in 0..rule.hops() {
        let (r, p) = argmax_prob(rule.hop_logits(store, k));
        let (f, w) = constraint(rule.constraint_logits(store, k));
        weight *= p * w;
        hops.push(r);
        constraints.push(f);
    }
    let head_constraint = rule.head_constraint_logits(store).map(|l| {
        let (f, w) = constraint(l);
        weight *= w;
        f
    });
    DecodedRule {
        target,
        index,
        hops,
        constraints,
        head_constraint,
        weight,
    }
}

/// Decoded rules of every target, each target sorted by descending weight.
/// Rules rendering to the same text are merged keeping the highest weight.
pub fn decode_rules(model: &Model) -> Vec<Vec<DecodedRule>> {
    let vocab = RelationVocab::new(model.relation_names().to_vec());
    (0..model.rules.targets())
        .map(|t| {
            let mut best: HashMap<String, DecodedRule> = HashMap::new();
            for i in 0..model.rules.rules_per_target() {
                let rule = decode_rule(model, t, i);
                let text = rule.render(&vocab);
                match best.get(&text) {
                    Some(prev) if prev.weight >= rule.weight => {}
                    _ => {
                        best.insert(text, rule);
                    }
                }
            }
            let mut rules: Vec<DecodedRule> = best.into_values().collect();
            rules.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.index.cmp(&b.index)));
            rules
        })
        .collect()
}

/// Rule dump text: header, then `weight<TAB>rule` lines grouped by target.
pub fn format_rules(model: &Model, rules: &[Vec<DecodedRule>]) -> String {
    let vocab = RelationVocab::new(model.relation_names().to_vec());
    let mut out = String::new();
    writeln!(out, "{WEIGHT_HEADER}").unwrap();
    for rule in rules.iter().flatten() {
        writeln!(out, "{:.6}\t{}", rule.weight, rule.render(&vocab)).unwrap();
    }
    out
}

/// Function dump text: header, then `weight<TAB>function` lines.
pub fn format_functions(model: &Model) -> String {
    let vocab = RelationVocab::new(model.relation_names().to_vec());
    let identity = vocab.identity();
    let mut out = String::new();
    writeln!(out, "{WEIGHT_HEADER}").unwrap();
    for f in decode_lerp(&model.store, &model.lerp, identity) {
        writeln!(out, "{:.6}\t{}", f.weight, render(&f.formula, &vocab, "e", 1)).unwrap();
    }
    out
}

pub fn write_rules(model: &Model, path: &Path) -> Result<()> {
    write_atomic(path, format_rules(model, &decode_rules(model)).as_bytes())
}

pub fn write_functions(model: &Model, path: &Path) -> Result<()> {
    write_atomic(path, format_functions(model).as_bytes())
}

/// One line per entity: name, then the `m + 1` values.
pub fn format_lerp_vectors(lerp: &LerpMatrix, graph: &KnowledgeGraph) -> String {
    let mut out = String::new();
    for e in 0..lerp.num_entities() {
        out.push_str(graph.entity_name(e));
        for v in lerp.entity(e) {
            write!(out, "\t{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn dump_lerp_vectors(model: &Model, graph: &KnowledgeGraph, path: &Path) -> Result<()> {
    let lerp = model.lerp_matrix(graph)?;
    write_atomic(path, format_lerp_vectors(&lerp, graph).as_bytes())
}

/// Logit gap used to make a softmax exactly one-hot in `f64`.
pub const HARD_LOGIT: f64 = 1000.0;

/// Replaces every row of the given logits by a one-hot logit row at its
/// argmax, so the soft model computes the decoded rule exactly.
pub fn harden(store: &mut ParamStore, ids: impl IntoIterator<Item = ParamId>) {
    for id in ids {
        let value = store.value_mut(id);
        for r in 0..value.rows() {
            let (best, _) = argmax_prob(value.row_slice(r));
            for (c, v) in value.row_slice_mut(r).iter_mut().enumerate() {
                *v = if c == best { HARD_LOGIT } else { 0.0 };
            }
        }
    }
}

/// Hardens every parameter of `model`.
pub fn harden_model(model: &mut Model) {
    let ids: Vec<ParamId> = model.lerp.param_ids().chain(model.rules.param_ids()).collect();
    harden(&mut model.store, ids);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Triplet;
    use crate::model::TrainConfig;
    use crate::tensor::Tensor;

    fn set_row(store: &mut ParamStore, id: ParamId, r: usize, hot: usize, logit: f64) {
        let row = store.value_mut(id).row_slice_mut(r);
        row.fill(0.0);
        row[hot] = logit;
    }

    fn family() -> KnowledgeGraph {
        // relations: 0 husband, 1 wife, 2 sister
        KnowledgeGraph::from_triplets(
            4,
            3,
            vec![Triplet::new(0, 0, 1), Triplet::new(1, 1, 0), Triplet::new(2, 2, 3)],
        )
        .unwrap()
    }

    fn model(t: usize, k: usize) -> (Model, KnowledgeGraph) {
        let g = family();
        let cfg = TrainConfig {
            m: 3,
            t,
            k,
            rules_per_relation: 2,
            epochs: 0,
            ..TrainConfig::default()
        };
        (Model::new(cfg, &g).unwrap(), g)
    }

    #[test]
    fn negated_chain_decodes_with_product_weight() {
        let (mut m, _) = model(2, 1);
        let sister_inv = 2 + 3;
        let (c1, op2) = (m.lerp.chain_logits(1), m.lerp.op_logits(2));
        set_row(&mut m.store, c1, 0, sister_inv, 3.0);
        set_row(&mut m.store, op2, 0, Operator::Negation.index(), 2.0);
        let (f, w) = decode_cell(&m.store, &m.lerp, 6, 2, 0);
        assert_eq!(f, Formula::not(Formula::chain(sister_inv, Formula::True)));
        let (_, pa) = argmax_prob(m.store.value(c1).row_slice(0));
        let (_, po) = argmax_prob(m.store.value(op2).row_slice(0));
        assert!((w - pa * po).abs() < 1e-15);
        assert!(w > 0.0 && w <= 1.0);
        let vocab = RelationVocab::new(m.relation_names().to_vec());
        assert_eq!(render(&f, &vocab, "e", 1), "∄z₁: r2(e,z₁)");
    }

    #[test]
    fn single_hop_rule_without_constraints() {
        let (mut m, _) = model(1, 2);
        // target husband′ with body wife, second hop the identity
        let target = 3;
        let h1 = m.rules.hop_logits(target, 0);
        let h2 = m.rules.hop_logits(target, 1);
        set_row(&mut m.store, h1, 0, 1, 5.0);
        set_row(&mut m.store, h2, 0, 6, 5.0);
        for k in 0..2 {
            let c = m.rules.constraint_logits(target, k);
            set_row(&mut m.store, c, 0, 3, 5.0);
        }
        let rule = decode_rule(&m, target, 0);
        assert_eq!(rule.chain(6), vec![1]);
        let vocab = RelationVocab::new(m.relation_names().to_vec());
        assert_eq!(rule.render(&vocab), "r1(x,y) ⇒ r0(y,x)");
        assert!(rule.weight > 0.0 && rule.weight <= 1.0);
    }

    #[test]
    fn true_rows_render_a_pure_chain() {
        let (mut m, _) = model(1, 2);
        for k in 0..2 {
            let c = m.rules.constraint_logits(0, k);
            set_row(&mut m.store, c, 1, 3, 4.0);
            let h = m.rules.hop_logits(0, k);
            set_row(&mut m.store, h, 1, 2 * k, 4.0);
        }
        let vocab = RelationVocab::new(m.relation_names().to_vec());
        assert_eq!(decode_rule(&m, 0, 1).render(&vocab), "r0(x,z₁) ∧ r2(z₁,y) ⇒ r0(x,y)");
    }

    #[test]
    fn duplicate_functions_are_merged() {
        let (mut m, _) = model(1, 1);
        let c1 = m.lerp.chain_logits(1);
        for i in 0..3 {
            set_row(&mut m.store, c1, i, 0, 1.0 + i as f64);
        }
        let fs = decode_lerp(&m.store, &m.lerp, 6);
        assert_eq!(fs.len(), 1);
        assert_eq!(fs[0].row, 2);
    }

    #[test]
    fn weights_shrink_as_choices_compose() {
        let (mut m, _) = model(2, 1);
        let op2 = m.lerp.op_logits(2);
        set_row(&mut m.store, op2, 0, Operator::Chaining.index(), 1.0);
        let (_, w1) = decode_cell(&m.store, &m.lerp, 6, 1, 0);
        let (_, w2) = decode_cell(&m.store, &m.lerp, 6, 2, 0);
        assert!(w1 <= 1.0 && w1 > 0.0);
        assert!(w2 <= w1 && w2 > 0.0);
    }

    #[test]
    fn depth_zero_dump_is_all_ones() {
        let (m, g) = model(0, 1);
        let text = format_lerp_vectors(&m.lerp_matrix(&g).unwrap(), &g);
        assert_eq!(text.lines().count(), 4);
        for line in text.lines() {
            let fields: Vec<&str> = line.split('\t').collect();
            assert_eq!(fields.len(), 5);
            assert!(fields[1..].iter().all(|v| *v == "1"));
        }
    }

    #[test]
    fn hardening_makes_softmax_exact() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::row(vec![0.3, 0.1, 0.7]));
        harden(&mut store, [id]);
        let mut p = store.value(id).row_slice(0).to_vec();
        softmax_in_place(&mut p);
        assert_eq!(p, vec![0.0, 0.0, 1.0]);
    }
}
