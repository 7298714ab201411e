//! The sibling example: `z` is the mother of `x`, `y` and `s`. Only `y` is a
//! son, so the rule "mother's child who is someone's son" picks out the
//! brother of `x` and not the sister.

use lerp::formula::{Formula, RelationVocab};
use lerp::interpret::{decode_rule, HARD_LOGIT};
use lerp::oracle::eval_extended_rule;
use lerp::rules::evaluate_rule;
use lerp::{KnowledgeGraph, Model, ParamId, TrainConfig, Triplet};

const X: usize = 0;
const Y: usize = 1;
const S: usize = 2;
const Z: usize = 3;
const F: usize = 4;

const MOTHER: usize = 0;
const SON_OF: usize = 1;
const DAUGHTER_OF: usize = 2;
const BROTHER: usize = 3;
const RAW: usize = 4;

fn graph() -> KnowledgeGraph {
    let edges = vec![
        Triplet::new(Z, MOTHER, X),
        Triplet::new(Z, MOTHER, Y),
        Triplet::new(Z, MOTHER, S),
        Triplet::new(Y, SON_OF, Z),
        Triplet::new(Y, SON_OF, F),
        Triplet::new(X, DAUGHTER_OF, Z),
        Triplet::new(S, DAUGHTER_OF, F),
        Triplet::new(Y, BROTHER, S),
    ];
    KnowledgeGraph::from_triplets(5, RAW, edges).unwrap()
}

fn inv(r: usize) -> usize {
    r + RAW
}

fn set_hot(model: &mut Model, id: ParamId, row: usize, col: usize) {
    let r = model.store.value_mut(id).row_slice_mut(row);
    r.fill(0.0);
    r[col] = HARD_LOGIT;
}

/// ∃z′: son_of(e, z′)
fn is_son() -> Formula {
    Formula::chain(inv(SON_OF), Formula::True)
}

#[test]
fn oracle_separates_brother_from_sister() {
    let g = graph();
    let chain = [inv(MOTHER), MOTHER];
    let plain = eval_extended_rule(&g, &chain, &[Formula::True, Formula::True], None, X);
    assert!(plain[Y] && plain[S] && plain[X]);
    let constrained = eval_extended_rule(&g, &chain, &[Formula::True, is_son()], None, X);
    assert_eq!(constrained, vec![false, true, false, false, false]);
}

#[test]
fn hardened_model_scores_only_the_brother() {
    let g = graph();
    let config = TrainConfig {
        m: 2,
        t: 1,
        k: 2,
        rules_per_relation: 1,
        epochs: 0,
        ..TrainConfig::default()
    };
    let mut model = Model::new(config, &g).unwrap();
    let target = inv(BROTHER);
    let chain1 = model.lerp.chain_logits(1);
    set_hot(&mut model, chain1, 0, inv(SON_OF));
    set_hot(&mut model, chain1, 1, MOTHER);
    let hop1 = model.rules.hop_logits(target, 0);
    let hop2 = model.rules.hop_logits(target, 1);
    set_hot(&mut model, hop1, 0, inv(MOTHER));
    set_hot(&mut model, hop2, 0, MOTHER);
    let c1 = model.rules.constraint_logits(target, 0);
    let c2 = model.rules.constraint_logits(target, 1);
    set_hot(&mut model, c1, 0, 2);
    set_hot(&mut model, c2, 0, 0);

    let lerp = model.lerp_matrix(&g).unwrap();
    let scores = evaluate_rule(&model.store, &model.rules, target, 0, &lerp, &g, X).unwrap();
    assert!(scores[Y] > 0.0);
    for e in [X, S, Z, F] {
        assert_eq!(scores[e], 0.0, "entity {e}");
    }

    let rule = decode_rule(&model, target, 0);
    assert_eq!(rule.hops, vec![inv(MOTHER), MOTHER]);
    assert_eq!(rule.constraints, vec![Formula::True, is_son()]);
    let vocab = RelationVocab::new(
        ["mother", "son_of", "daughter_of", "brother"]
            .iter()
            .map(|s| s.to_string())
            .chain(["mother", "son_of", "daughter_of", "brother"].iter().map(|s| format!("{s}_inv")))
            .chain(["<identity>".to_string()])
            .collect(),
    );
    assert_eq!(
        rule.render(&vocab),
        "mother(z₁,x) ∧ mother(z₁,y) ∧ (∃z₂: son_of(y,z₂)) ⇒ brother(y,x)"
    );
}
