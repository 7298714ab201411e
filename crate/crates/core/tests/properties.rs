use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lerp::checks::random_graph;
use lerp::formula::Formula;
use lerp::oracle::{count_paths, eval_extended_rule, eval_tree_function, eval_tree_function_reference};
use lerp::tensor::softmax_rows;
use lerp::{KnowledgeGraph, Model, Tensor, TrainConfig};

fn graph_from_seed(seed: u64, max_n: usize) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 + (seed as usize % (max_n - 1));
    let relations = 1 + (seed as usize / 7) % 3;
    random_graph(&mut rng, n, relations, 0.25)
}

fn formula(relations: usize) -> impl Strategy<Value = Formula> {
    let leaf = Just(Formula::True);
    leaf.prop_recursive(5, 24, 2, move |inner| {
        prop_oneof![
            (0..relations, inner.clone()).prop_map(|(r, f)| Formula::chain(r, f)),
            inner.clone().prop_map(Formula::not),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::and(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| Formula::or(a, b)),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lerp_entries_stay_in_unit_interval(
        seed in 0u64..10_000,
        m in 1usize..5,
        t in 0usize..4,
        scale in 0.1f64..5.0,
    ) {
        let g = graph_from_seed(seed, 10);
        let config = TrainConfig { m, t, k: 1, rules_per_relation: 1, epochs: 0, seed, ..TrainConfig::default() };
        let mut model = Model::new(config, &g).unwrap();
        let ids: Vec<_> = model.lerp.param_ids().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for id in ids {
            for v in model.store.value_mut(id).data_mut() {
                let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                *v = scale * z;
            }
        }
        let lerp = model.lerp_matrix(&g).unwrap();
        prop_assert_eq!(lerp.rows(), m + 1);
        for &v in lerp.values().data() {
            prop_assert!((0.0..=1.0).contains(&v), "value {} outside [0,1]", v);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(
        rows in 1usize..6,
        values in prop::collection::vec(-50.0f64..50.0, 1..40),
    ) {
        let cols = values.len();
        let data: Vec<f64> = (0..rows).flat_map(|r| values.iter().map(move |v| v * (r + 1) as f64)).collect();
        let p = softmax_rows(&Tensor::from_vec(rows, cols, data));
        for r in 0..rows {
            let s: f64 = p.row_slice(r).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12, "row sum {}", s);
            prop_assert!(p.row_slice(r).iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn memoized_truth_matches_reference(seed in 0u64..10_000, f in formula(7)) {
        let g = graph_from_seed(seed, 12);
        prop_assume!(f.relations().iter().all(|&r| r < g.num_relations()));
        for e in 0..g.num_entities() {
            prop_assert_eq!(eval_tree_function(&f, &g, e), eval_tree_function_reference(&f, &g, e));
        }
    }

    #[test]
    fn path_counts_match_repeated_spmv(seed in 0u64..10_000, chain in prop::collection::vec(0usize..3, 1..4)) {
        let g = graph_from_seed(seed, 10);
        let chain: Vec<usize> = chain.into_iter().map(|r| r % g.num_relations()).collect();
        for x in 0..g.num_entities() {
            let mut v = vec![0.0; g.num_entities()];
            v[x] = 1.0;
            for &r in &chain {
                v = g.spmv_left(&v, r);
            }
            let counts = count_paths(&g, &chain, x);
            prop_assert!(v.iter().zip(&counts).all(|(&a, &b)| a == b as f64));

            let trivial = vec![Formula::True; chain.len()];
            let support = eval_extended_rule(&g, &chain, &trivial, None, x);
            prop_assert!(support.iter().zip(&counts).all(|(&s, &c)| s == (c > 0)));
        }
    }
}
