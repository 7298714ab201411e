//! Logical entity representations.
//!
//! Each entity gets a vector of `m` soft truth values, one per learned
//! tree-like logical function. The functions are computed on a grid of
//! `T + 1` columns by `m` cells: column 0 is constant `true`, column 1 can
//! only chain a relation onto it, and every later cell mixes six operators
//! applied to the previous column. The last column, plus one extra
//! always-true row, forms the [`LerpMatrix`].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::kg::{EdgeMask, KnowledgeGraph};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// The operators a grid cell mixes, in logit-column order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operator {
    True,
    Chaining,
    Negation,
    Copy,
    And,
    Or,
}

impl Operator {
    pub const ALL: [Operator; 6] = [
        Operator::True,
        Operator::Chaining,
        Operator::Negation,
        Operator::Copy,
        Operator::And,
        Operator::Or,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Operator {
        Operator::ALL[i]
    }
}

pub const NUM_OPERATORS: usize = 6;

/// Whether chaining squashes its relation-weighted counts with `1 − e^{−x}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClampVariant {
    #[default]
    Clamped,
    Unclamped,
}

/// Parameter handles for the function grid. Column `j` runs from 1 to
/// `depth`; column 1 has chaining logits only.
#[derive(Clone, Debug, PartialEq)]
pub struct LerpParams {
    depth: usize,
    width: usize,
    relations: usize,
    chain: Vec<ParamId>,
    ops: Vec<ParamId>,
    merge_and: Vec<ParamId>,
    merge_or: Vec<ParamId>,
}

impl LerpParams {
    /// Allocates logits in `store`, drawn from `N(0, sigma²)`.
    pub fn init(
        store: &mut ParamStore,
        depth: usize,
        width: usize,
        relations: usize,
        sigma: f64,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(width >= 1, "LERP width must be at least 1");
        let normal = Normal::new(0.0, sigma).expect("valid sigma");
        let mut draw = |rows: usize, cols: usize| {
            Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| normal.sample(rng)).collect())
        };
        let mut chain = Vec::new();
        let mut ops = Vec::new();
        let mut merge_and = Vec::new();
        let mut merge_or = Vec::new();
        for j in 1..=depth {
            chain.push(store.add(format!("lerp.chain.{j}"), draw(width, relations)));
            if j >= 2 {
                ops.push(store.add(format!("lerp.op.{j}"), draw(width, NUM_OPERATORS)));
                merge_and.push(store.add(format!("lerp.and.{j}"), draw(width, width)));
                merge_or.push(store.add(format!("lerp.or.{j}"), draw(width, width)));
            }
        }
        LerpParams {
            depth,
            width,
            relations,
            chain,
            ops,
            merge_and,
            merge_or,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn relations(&self) -> usize {
        self.relations
    }

    /// Relation-choice logits (`width × relations`) of column `j ≥ 1`.
    pub fn chain_logits(&self, j: usize) -> ParamId {
        self.chain[j - 1]
    }

    /// Operator logits (`width × 6`) of column `j ≥ 2`.
    pub fn op_logits(&self, j: usize) -> ParamId {
        self.ops[j - 2]
    }

    /// ∧-partner logits (`width × width`) of column `j ≥ 2`.
    pub fn and_logits(&self, j: usize) -> ParamId {
        self.merge_and[j - 2]
    }

    /// ∨-partner logits (`width × width`) of column `j ≥ 2`.
    pub fn or_logits(&self, j: usize) -> ParamId {
        self.merge_or[j - 2]
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.chain
            .iter()
            .chain(&self.ops)
            .chain(&self.merge_and)
            .chain(&self.merge_or)
            .copied()
    }

    /// Number of logit scalars in the grid.
    pub fn count_learnable_scalars(&self) -> usize {
        lerp_scalar_count(self.depth, self.width, self.relations)
    }
}

pub fn lerp_scalar_count(depth: usize, width: usize, relations: usize) -> usize {
    if depth == 0 {
        return 0;
    }
    depth * width * relations + (depth - 1) * (width * NUM_OPERATORS + 2 * width * width)
}

/// Soft truth values, entity-major: `values[e][i]` is function `i` at
/// entity `e`; the last column (`i = width`) is the constant-true function.
#[derive(Clone, Debug, PartialEq)]
pub struct LerpMatrix {
    values: Tensor,
}

impl LerpMatrix {
    pub fn new(values: Tensor) -> Self {
        LerpMatrix { values }
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor {
        self.values
    }

    /// Functions including the true row, i.e. `m + 1`.
    pub fn rows(&self) -> usize {
        self.values.cols()
    }

    pub fn num_entities(&self) -> usize {
        self.values.rows()
    }

    /// Value of function `i` at entity `e`.
    pub fn get(&self, i: usize, e: usize) -> f64 {
        self.values.get(e, i)
    }

    /// The LERP vector of entity `e`.
    pub fn entity(&self, e: usize) -> &[f64] {
        self.values.row_slice(e)
    }
}

/// Records the grid on `tape` and returns the `n × (m + 1)` LERP node.
pub fn forward_lerp<'g>(
    tape: &mut Tape<'g>,
    store: &ParamStore,
    params: &LerpParams,
    graph: &'g KnowledgeGraph,
    mask: Option<&'g EdgeMask>,
    clamp: ClampVariant,
) -> NodeId {
    let n = graph.num_entities();
    let m = params.width;
    assert_eq!(
        params.relations,
        graph.num_relations(),
        "LERP parameters were sized for a different relation set"
    );
    let identity_map: Vec<usize> = (0..m).collect();
    let ones = tape.constant(Tensor::ones(n, m));

    let mut column = ones;
    for j in 1..=params.depth {
        let alpha_logits = tape.param(store, params.chain_logits(j));
        let alpha = tape.softmax(alpha_logits);
        let spread = tape.propagate(column, alpha, identity_map.clone(), graph, mask);
        let chained = match clamp {
            ClampVariant::Clamped => tape.clamp_soft(spread),
            ClampVariant::Unclamped => spread,
        };
        if j == 1 {
            column = chained;
            continue;
        }

        let negated = tape.one_minus(column);

        let and_logits = tape.param(store, params.and_logits(j));
        let beta_and = tape.softmax(and_logits);
        let and_partner = tape.matmul_bt(column, beta_and);
        let conj = tape.hadamard(column, and_partner);

        let or_logits = tape.param(store, params.or_logits(j));
        let beta_or = tape.softmax(or_logits);
        let or_partner = tape.matmul_bt(column, beta_or);
        let not_partner = tape.one_minus(or_partner);
        let both_false = tape.hadamard(negated, not_partner);
        let disj = tape.one_minus(both_false);

        let op_logits = tape.param(store, params.op_logits(j));
        let p = tape.softmax(op_logits);
        // order matches Operator::ALL
        column = tape.mix(p, &[ones, chained, negated, column, conj, disj]);
    }

    let true_row = tape.constant(Tensor::ones(n, 1));
    tape.concat_cols(&[column, true_row])
}

/// Gradient-free evaluation of the LERP matrix.
pub fn compute_lerp(
    store: &ParamStore,
    params: &LerpParams,
    graph: &KnowledgeGraph,
    clamp: ClampVariant,
) -> LerpMatrix {
    let mut tape = Tape::new();
    let node = forward_lerp(&mut tape, store, params, graph, None, clamp);
    LerpMatrix::new(tape.value(node).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Triplet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const HOT: f64 = 1000.0;

    fn one_hot_logits(rows: usize, cols: usize, pick: &[usize]) -> Tensor {
        let mut t = Tensor::zeros(rows, cols);
        for (r, &c) in pick.iter().enumerate() {
            t.set(r, c, HOT);
        }
        t
    }

    #[test]
    fn depth_zero_gives_all_ones() {
        let g = KnowledgeGraph::from_triplets(3, 1, vec![Triplet::new(0, 0, 1)]).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = LerpParams::init(&mut store, 0, 4, g.num_relations(), 0.01, &mut rng);
        let lerp = compute_lerp(&store, &params, &g, ClampVariant::Clamped);
        assert_eq!(lerp.rows(), 5);
        assert!(lerp.values().data().iter().all(|&v| v == 1.0));
        assert_eq!(params.count_learnable_scalars(), 0);
    }

    #[test]
    fn single_chaining_step_clamps_counts() {
        // one relation r with edge a→b
        let g = KnowledgeGraph::from_triplets(3, 1, vec![Triplet::new(0, 0, 1)]).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = LerpParams::init(&mut store, 1, 1, g.num_relations(), 0.01, &mut rng);
        *store.value_mut(params.chain_logits(1)) = one_hot_logits(1, 3, &[0]);
        let lerp = compute_lerp(&store, &params, &g, ClampVariant::Clamped);
        let clamp1 = 1.0 - (-1.0f64).exp();
        assert!((lerp.get(0, 1) - clamp1).abs() < 1e-15);
        assert_eq!(lerp.get(0, 0), 0.0);
        assert_eq!(lerp.get(0, 2), 0.0);
        assert!((0..3).all(|e| lerp.get(1, e) == 1.0));
    }

    #[test]
    fn negating_the_first_column() {
        let g = KnowledgeGraph::from_triplets(3, 1, vec![Triplet::new(0, 0, 1)]).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = LerpParams::init(&mut store, 2, 1, g.num_relations(), 0.01, &mut rng);
        *store.value_mut(params.chain_logits(1)) = one_hot_logits(1, 3, &[0]);
        *store.value_mut(params.op_logits(2)) = one_hot_logits(1, 6, &[Operator::Negation.index()]);
        let lerp = compute_lerp(&store, &params, &g, ClampVariant::Clamped);
        assert!((lerp.get(0, 1) - (-1.0f64).exp()).abs() < 1e-12);
        assert!((lerp.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_counts() {
        assert_eq!(lerp_scalar_count(1, 1, 3), 3);
        // width 80, depth 2, 25 relation slots
        assert_eq!(lerp_scalar_count(2, 80, 25), 2 * 80 * 25 + 80 * 6 + 2 * 80 * 80);
        let small = lerp_scalar_count(2, 10, 25);
        let large = lerp_scalar_count(2, 20, 25);
        assert!(large > 2 * small);

        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = LerpParams::init(&mut store, 3, 7, 9, 0.01, &mut rng);
        assert_eq!(params.count_learnable_scalars(), store.scalar_count());
    }

    #[test]
    fn unclamped_chaining_keeps_raw_counts() {
        // two parallel paths into b
        let g = KnowledgeGraph::from_triplets(3, 1, vec![Triplet::new(0, 0, 1), Triplet::new(2, 0, 1)]).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = LerpParams::init(&mut store, 1, 1, g.num_relations(), 0.01, &mut rng);
        *store.value_mut(params.chain_logits(1)) = one_hot_logits(1, 3, &[0]);
        let lerp = compute_lerp(&store, &params, &g, ClampVariant::Unclamped);
        assert_eq!(lerp.get(0, 1), 2.0);
    }
}
