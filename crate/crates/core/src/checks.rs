//! Randomized self-checks against the oracle and against finite
//! differences. Shared by the `oracle-check` command and the test suites.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Tape;
use crate::formula::Formula;
use crate::interpret::{decode_rule, harden_model, HARD_LOGIT};
use crate::kg::{EdgeMask, KnowledgeGraph, Triplet};
use crate::lerp::{forward_lerp, ClampVariant, Operator};
use crate::model::{Model, TrainConfig};
use crate::oracle::{count_paths, eval_extended_rule, measure_ops, RuleSpec};
use crate::param::{ParamId, ParamStore};
use crate::rules::{score_queries, Query};

/// Outcome of one randomized suite.
#[derive(Clone, Debug, Default)]
pub struct SuiteReport {
    pub name: String,
    pub cases: usize,
    pub checks: usize,
    pub failures: Vec<String>,
    pub seconds: f64,
    /// Suite-specific tallies, e.g. checks per parameter family.
    pub tallies: BTreeMap<String, usize>,
}

impl SuiteReport {
    fn new(name: &str) -> Self {
        SuiteReport {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn fail(&mut self, message: String) {
        // keep reports readable when something is systematically wrong
        if self.failures.len() < 20 {
            self.failures.push(message);
        } else if self.failures.len() == 20 {
            self.failures.push("further failures omitted".into());
        }
    }

    fn tally(&mut self, key: &str) {
        *self.tallies.entry(key.into()).or_default() += 1;
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} cases, {} checks, {} failures, {:.1}s",
            self.name,
            self.cases,
            self.checks,
            self.failures.len(),
            self.seconds
        )
    }
}

/// Graph with `n` entities and `relations` raw relations where every
/// possible edge is present with probability `density`.
pub fn random_graph(rng: &mut impl Rng, n: usize, relations: usize, density: f64) -> KnowledgeGraph {
    let mut train = Vec::new();
    for h in 0..n {
        for r in 0..relations {
            for t in 0..n {
                if rng.random_bool(density) {
                    train.push(Triplet::new(h, r, t));
                }
            }
        }
    }
    KnowledgeGraph::from_triplets(n, relations, train).expect("valid random graph")
}

/// Random formula with at most `max_size` nodes over `relations`.
pub fn random_formula(rng: &mut impl Rng, relations: usize, max_size: usize, negation: bool) -> Formula {
    assert!(max_size >= 1);
    if max_size == 1 {
        return Formula::True;
    }
    let kinds: &[u8] = if negation { &[0, 1, 2, 3, 4] } else { &[0, 1, 3, 4] };
    match *kinds.choose(rng).unwrap() {
        0 => Formula::True,
        1 => Formula::chain(rng.random_range(0..relations), random_formula(rng, relations, max_size - 1, negation)),
        2 => Formula::not(random_formula(rng, relations, max_size - 1, negation)),
        k if max_size >= 3 => {
            let left = rng.random_range(1..=max_size - 2);
            let a = random_formula(rng, relations, left, negation);
            let b = random_formula(rng, relations, max_size - 1 - a.size(), negation);
            if k == 3 {
                Formula::and(a, b)
            } else {
                Formula::or(a, b)
            }
        }
        _ => Formula::chain(rng.random_range(0..relations), Formula::True),
    }
}

fn randomize(store: &mut ParamStore, ids: &[ParamId], sigma: f64, rng: &mut impl Rng) {
    let normal = Normal::new(0.0, sigma).unwrap();
    for &id in ids {
        for v in store.value_mut(id).data_mut() {
            *v = normal.sample(rng);
        }
    }
}

fn all_ids(model: &Model) -> Vec<ParamId> {
    model.lerp.param_ids().chain(model.rules.param_ids()).collect()
}

/// `n × n` scores of one rule index for every head entity.
fn rule_scores(model: &Model, graph: &KnowledgeGraph, target: usize, index: usize) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let lerp = forward_lerp(&mut tape, &model.store, &model.lerp, graph, None, model.config.clamp_variant);
    let queries: Vec<Query> = (0..graph.num_entities()).map(|h| Query::new(h, target)).collect();
    let node = score_queries(&mut tape, &model.store, &model.rules, lerp, graph, &queries, Some(index), None)
        .expect("valid queries");
    let value = tape.value(node);
    (0..queries.len()).map(|q| value.column_vec(q)).collect()
}

/// Hardened soft evaluation against the discrete oracle on random graphs:
/// path counts of constraint-free rules must match exactly, and the support
/// of negation-free extended rules must match exactly.
pub fn oracle_suite(cases: usize, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut report = SuiteReport::new("oracle equivalence");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let n = rng.random_range(2..=12);
        let raw = rng.random_range(1..=4);
        let density = rng.random_range(0.05..0.4);
        let graph = random_graph(&mut rng, n, raw, density);
        let config = TrainConfig {
            m: rng.random_range(1..=4),
            t: rng.random_range(0..=2),
            k: rng.random_range(1..=3),
            rules_per_relation: 2,
            epochs: 0,
            constrain_head: rng.random_bool(0.3),
            seed: case as u64,
            ..TrainConfig::default()
        };
        let mut model = Model::new(config, &graph).expect("valid config");
        let ids = all_ids(&model);
        randomize(&mut model.store, &ids, 1.0, &mut rng);
        // negation rarely wins so that most rules are negation-free
        for j in 2..=model.lerp.depth() {
            let op = model.lerp.op_logits(j);
            let value = model.store.value_mut(op);
            for r in 0..value.rows() {
                if rng.random_bool(0.8) {
                    value.row_slice_mut(r)[Operator::Negation.index()] -= 10.0;
                }
            }
        }
        harden_model(&mut model);
        report.cases += 1;

        let targets: Vec<usize> = (0..graph.num_targets()).collect();
        let picked: Vec<usize> = targets.choose_multiple(&mut rng, 3).copied().collect();
        let identity = graph.identity_relation();

        // extended rules with their decoded constraints
        for &t in &picked {
            for i in 0..model.rules.rules_per_target() {
                let rule = decode_rule(&model, t, i);
                if !rule.is_negation_free() {
                    report.tally("skipped: negation");
                    continue;
                }
                let scores = rule_scores(&model, &graph, t, i);
                for (x, s) in scores.iter().enumerate() {
                    let want =
                        eval_extended_rule(&graph, &rule.hops, &rule.constraints, rule.head_constraint.as_ref(), x);
                    report.checks += 1;
                    let got: Vec<bool> = s.iter().map(|&v| v > 0.0).collect();
                    if got != want {
                        report.fail(format!(
                            "case {case}: support of rule {t}/{i} from {x}: soft {got:?} oracle {want:?}"
                        ));
                    }
                }
                report.tally("extended rules");
            }
        }

        // constraint-free: every constraint row picks the always-true row
        let true_row = model.config.m;
        let mut ids = Vec::new();
        for t in 0..model.rules.targets() {
            for k in 0..model.rules.hops() {
                ids.push(model.rules.constraint_logits(t, k));
            }
            ids.extend(model.rules.head_constraint_logits(t));
        }
        for id in ids {
            let value = model.store.value_mut(id);
            for r in 0..value.rows() {
                let row = value.row_slice_mut(r);
                row.fill(0.0);
                row[true_row] = HARD_LOGIT;
            }
        }
        for &t in &picked {
            for i in 0..model.rules.rules_per_target() {
                let rule = decode_rule(&model, t, i);
                let scores = rule_scores(&model, &graph, t, i);
                for (x, s) in scores.iter().enumerate() {
                    let counts = count_paths(&graph, &rule.hops, x);
                    report.checks += 1;
                    if s.iter().zip(&counts).any(|(&a, &b)| a != b as f64) {
                        report.fail(format!(
                            "case {case}: path counts of {:?} from {x}: soft {s:?} oracle {counts:?}",
                            rule.hops
                        ));
                    }
                }
                report.tally("chain rules");
                if rule.chain(identity).len() < rule.hops.len() {
                    report.tally("chain rules with identity hops");
                }
            }
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    report
}

/// Relative gradient tolerance and its absolute floor.
pub const GRAD_REL_TOL: f64 = 1e-3;
pub const GRAD_ABS_FLOOR: f64 = 1e-8;
pub const FD_STEP: f64 = 1e-5;

/// Parameter family of a parameter name, e.g. `rule.3.hop.2` → `rule.hop`.
pub fn param_family(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts.as_slice() {
        ["lerp", kind, _] => format!("lerp.{kind}"),
        ["rule", _, "constraint", "0"] => "rule.head_constraint".into(),
        ["rule", _, kind, _] => format!("rule.{kind}"),
        _ => name.into(),
    }
}

pub const PARAM_FAMILIES: [&str; 7] = [
    "lerp.chain",
    "lerp.op",
    "lerp.and",
    "lerp.or",
    "rule.hop",
    "rule.constraint",
    "rule.head_constraint",
];

/// Whether `analytic` matches `numeric` within the suite tolerance.
pub fn gradient_close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= GRAD_ABS_FLOOR || diff <= GRAD_REL_TOL * analytic.abs().max(numeric.abs())
}

fn batch_loss(model: &Model, graph: &KnowledgeGraph, batch: &[Triplet], mask: &EdgeMask) -> f64 {
    let mut tape = Tape::new();
    let lerp = forward_lerp(&mut tape, &model.store, &model.lerp, graph, Some(mask), model.config.clamp_variant);
    let queries: Vec<Query> = batch.iter().map(|q| Query::new(q.head, q.relation)).collect();
    let scores = score_queries(&mut tape, &model.store, &model.rules, lerp, graph, &queries, None, Some(mask))
        .expect("valid queries");
    let loss = tape.cross_entropy(scores, batch.iter().map(|q| q.tail).collect());
    tape.scalar(loss)
}

/// Entities reachable from `head` in at most `hops` steps of the unmasked
/// relations.
fn reachable(graph: &KnowledgeGraph, mask: &EdgeMask, head: usize, hops: usize) -> Vec<usize> {
    let n = graph.num_entities();
    let mut seen = vec![false; n];
    seen[head] = true;
    let mut frontier = vec![head];
    for _ in 0..hops {
        let mut next = Vec::new();
        for &i in &frontier {
            for r in 0..graph.num_relations() {
                let m = graph.matrix(r);
                let hidden = mask.relation(r);
                for k in m.row_range(i) {
                    let j = m.col_indices()[k];
                    if !hidden[k] && !seen[j] {
                        seen[j] = true;
                        next.push(j);
                    }
                }
            }
        }
        frontier = next;
    }
    (0..n).filter(|&e| seen[e]).collect()
}

/// Backpropagated gradients of the training loss against central finite
/// differences, for every scalar of every parameter.
pub fn gradient_suite(cases: usize, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut report = SuiteReport::new("gradient check");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let n = rng.random_range(2..=8);
        let raw = rng.random_range(1..=3);
        let density = rng.random_range(0.1..0.5);
        let graph = random_graph(&mut rng, n, raw, density);
        let t = rng.random_range(0..=2);
        let clamp_variant = if t <= 1 && rng.random_bool(0.3) {
            ClampVariant::Unclamped
        } else {
            ClampVariant::Clamped
        };
        let config = TrainConfig {
            m: rng.random_range(1..=4),
            t,
            k: rng.random_range(1..=2),
            rules_per_relation: rng.random_range(1..=3),
            epochs: 0,
            constrain_head: rng.random_bool(0.4),
            clamp_variant,
            seed: case as u64,
            ..TrainConfig::default()
        };
        let mut model = Model::new(config, &graph).expect("valid config");
        let ids = all_ids(&model);
        randomize(&mut model.store, &ids, 0.5, &mut rng);

        // a small batch; hidden edges as in training
        let mut mask = EdgeMask::new(&graph);
        let mut batch = Vec::new();
        for _ in 0..rng.random_range(1..=4) {
            let edges = graph.train();
            if !edges.is_empty() && rng.random_bool(0.5) {
                let e = *edges.choose(&mut rng).unwrap();
                mask.hide(&graph, e.head, e.relation, e.tail);
                batch.push(e);
            } else {
                let h = rng.random_range(0..n);
                batch.push(Triplet::new(h, rng.random_range(0..graph.num_targets()), h));
            }
        }
        // gold answers must be reachable, otherwise the loss sits on its floor
        for q in &mut batch {
            let reach = reachable(&graph, &mask, q.head, model.config.k);
            if !reach.contains(&q.tail) {
                q.tail = *reach.choose(&mut rng).unwrap();
            }
        }
        report.cases += 1;

        // analytic
        let mut tape = Tape::new();
        let lerp = forward_lerp(&mut tape, &model.store, &model.lerp, &graph, Some(&mask), model.config.clamp_variant);
        let queries: Vec<Query> = batch.iter().map(|q| Query::new(q.head, q.relation)).collect();
        let scores = score_queries(&mut tape, &model.store, &model.rules, lerp, &graph, &queries, None, Some(&mask))
            .expect("valid queries");
        let loss = tape.cross_entropy(scores, batch.iter().map(|q| q.tail).collect());
        if !tape.scalar(loss).is_finite() {
            report.fail(format!("case {case}: non-finite loss"));
            continue;
        }
        model.store.zero_grad();
        tape.backward(loss, &mut model.store);
        drop(tape);

        // numeric
        for &id in &ids {
            let name = model.store.get(id).name.clone();
            let family = param_family(&name);
            let analytic = model.store.grad(id).clone();
            for idx in 0..analytic.data().len() {
                let orig = model.store.value(id).data()[idx];
                model.store.value_mut(id).data_mut()[idx] = orig + FD_STEP;
                let up = batch_loss(&model, &graph, &batch, &mask);
                model.store.value_mut(id).data_mut()[idx] = orig - FD_STEP;
                let down = batch_loss(&model, &graph, &batch, &mask);
                model.store.value_mut(id).data_mut()[idx] = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                let a = analytic.data()[idx];
                report.checks += 1;
                report.tally(&family);
                if !gradient_close(a, numeric) {
                    report.fail(format!(
                        "case {case}: {name}[{idx}] analytic {a:e} numeric {numeric:e}"
                    ));
                }
            }
        }
    }
    for family in PARAM_FAMILIES {
        if !report.tallies.contains_key(family) {
            report.fail(format!("parameter family {family} never checked"));
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    report
}

/// Instrumented multiply counts against `K (1 + D) n²` on dense and sparse
/// random graphs for each `n` in `sizes`.
pub fn bound_suite(sizes: &[usize], cases_per_size: usize, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut report = SuiteReport::new("complexity bound");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &n in sizes {
        let mut worst: f64 = 0.0;
        for case in 0..cases_per_size {
            let raw = rng.random_range(1..=4);
            let density = if case % 2 == 0 { 0.5 } else { 0.02 };
            let graph = random_graph(&mut rng, n, raw, density);
            let relations = graph.num_relations();
            let hops = rng.random_range(1..=3);
            let ops = rng.random_range(0..=6);
            let constraints = (0..hops)
                .map(|_| {
                    (ops > 0 && rng.random_bool(0.7))
                        .then(|| random_formula(&mut rng, relations, ops, true))
                })
                .collect();
            let spec = RuleSpec {
                chain: (0..hops).map(|_| rng.random_range(0..relations)).collect(),
                constraints,
                ops,
            };
            let x = rng.random_range(0..n);
            report.cases += 1;
            report.checks += 1;
            match measure_ops(&graph, &spec, x) {
                Ok((_, counter)) => {
                    worst = worst.max(counter.multiplies as f64 / counter.bound() as f64);
                }
                Err(e) => report.fail(format!("n={n} case {case}: {e}")),
            }
        }
        report
            .tallies
            .insert(format!("n={n} worst count/bound x1000"), (worst * 1000.0).round() as usize);
    }
    report.seconds = start.elapsed().as_secs_f64();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_from_names() {
        assert_eq!(param_family("lerp.chain.1"), "lerp.chain");
        assert_eq!(param_family("rule.3.hop.2"), "rule.hop");
        assert_eq!(param_family("rule.3.constraint.1"), "rule.constraint");
        assert_eq!(param_family("rule.0.constraint.0"), "rule.head_constraint");
    }

    #[test]
    fn tolerance() {
        assert!(gradient_close(1.0, 1.0005));
        assert!(!gradient_close(1.0, 1.002));
        assert!(gradient_close(0.0, 5e-9));
        assert!(!gradient_close(0.0, 5e-8));
    }

    #[test]
    fn random_formulas_respect_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for size in 1..8 {
            for _ in 0..50 {
                let f = random_formula(&mut rng, 3, size, false);
                assert!(f.size() <= size);
                assert!(!f.has_negation());
            }
        }
    }

    #[test]
    fn small_suites_pass() {
        for r in [oracle_suite(10, 3), gradient_suite(5, 3), bound_suite(&[10], 4, 3)] {
            assert!(r.passed(), "{}: {:?}", r.summary(), r.failures);
        }
    }
}
