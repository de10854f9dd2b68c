//! Clique-sum functions and their factorization across a decomposition: the
//! components must add back up to the function, claim each clique exactly
//! once, and read nothing outside their own bag. Plus the evaluation
//! contracts of the two term kinds and the validation both enforce.

mod common;

use std::collections::BTreeMap;

use common::{fig_graph, random_graph};
use neural_tree::graph::{Graph, NodeSet};
use neural_tree::pgm::{
    eval_compatible, factorize, sample_random_compatible, Assignment, CliqueFn,
    CompatibleFunction, DiscreteTable, PgmError, PiecewiseLinear, SampleMode, Value, PWL_KNOTS,
};
use neural_tree::treedecomp::{junction_tree, TreeDecomposition};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn random_states(rng: &mut ChaCha20Rng, g: &Graph, domain: usize) -> Assignment {
    g.nodes().iter().map(|&v| (v, Value::State(rng.random_range(0..domain)))).collect()
}

fn random_reals(rng: &mut ChaCha20Rng, g: &Graph) -> Assignment {
    g.nodes().iter().map(|&v| (v, Value::Real(rng.random()))).collect()
}

/// Sum of components minus direct evaluation, which must vanish.
fn reconstruction_gap(f: &CompatibleFunction, td: &TreeDecomposition, x: &Assignment) -> f64 {
    let fac = factorize(f, td).unwrap();
    let total: f64 =
        fac.ordered_roots().iter().map(|&r| fac.gamma(f, r, x).unwrap()).sum();
    (total - eval_compatible(f, x).unwrap()).abs()
}

#[test]
fn components_sum_back_to_the_function() {
    let mut rng = ChaCha20Rng::seed_from_u64(51);
    for case in 0..30 {
        let n = 2 + case % 9;
        let g = random_graph(&mut rng, n, 0.45);
        let td = junction_tree(&g);

        let f = sample_random_compatible(&g, SampleMode::Discrete { domain: 2 }, case as u64);
        for _ in 0..10 {
            let x = random_states(&mut rng, &g, 2);
            assert!(reconstruction_gap(&f, &td, &x) <= 1e-12, "case {case}");
        }

        let f = sample_random_compatible(&g, SampleMode::Continuous { lipschitz: 1.5 }, case as u64);
        for _ in 0..10 {
            let x = random_reals(&mut rng, &g);
            assert!(reconstruction_gap(&f, &td, &x) <= 1e-12, "case {case} (continuous)");
        }
    }
}

#[test]
fn factorization_partitions_the_cliques() {
    let mut rng = ChaCha20Rng::seed_from_u64(52);
    for case in 0..30 {
        let n = 2 + case % 9;
        let g = random_graph(&mut rng, n, 0.45);
        let td = junction_tree(&g);
        let f = sample_random_compatible(&g, SampleMode::Discrete { domain: 3 }, case as u64);
        let fac = factorize(&f, &td).unwrap();

        let mut roots: Vec<usize> = fac.ordered_roots().to_vec();
        roots.sort_unstable();
        assert_eq!(roots, (0..td.num_bags()).collect::<Vec<_>>(), "roots visit every bag once");

        let mut claimed = vec![0usize; f.cliques().len()];
        for &r in fac.ordered_roots() {
            for &c in fac.cliques_of(r) {
                claimed[c] += 1;
                assert!(
                    f.cliques()[c].is_subset_of(td.bag(r)),
                    "clique {c} assigned outside its bag"
                );
            }
        }
        assert!(claimed.iter().all(|&c| c == 1), "each clique claimed exactly once: {claimed:?}");
    }
}

#[test]
fn components_never_read_outside_their_bag() {
    let mut rng = ChaCha20Rng::seed_from_u64(53);
    for case in 0..30 {
        let n = 3 + case % 8;
        let g = random_graph(&mut rng, n, 0.45);
        let td = junction_tree(&g);
        let domain = 2 + case % 2;
        let f = sample_random_compatible(&g, SampleMode::Discrete { domain }, case as u64);
        let fac = factorize(&f, &td).unwrap();

        let x = random_states(&mut rng, &g, domain);
        for &r in fac.ordered_roots() {
            let bag = td.bag(r);
            let mut y = x.clone();
            for (&v, value) in y.iter_mut() {
                if !bag.contains(v) {
                    let Value::State(s) = value else { unreachable!() };
                    *value = Value::State((*s + 1) % domain);
                }
            }
            // Bitwise equality: the summands are the same floats, because the
            // changed coordinates are never touched.
            let before = fac.gamma(&f, r, &x).unwrap();
            let after = fac.gamma(&f, r, &y).unwrap();
            assert_eq!(before.to_bits(), after.to_bits(), "case {case}, root {r}");
        }
    }
}

#[test]
fn discrete_tables_index_row_major() {
    // One clique {0, 1}, domain 3: entry for (s₀, s₁) sits at 3·s₀ + s₁.
    let g = Graph::new(vec![0, 1], vec![(0, 1)]).unwrap();
    let table = DiscreteTable { domain: 3, entries: (0..9).map(f64::from).collect() };
    let f = CompatibleFunction::new(g, vec![CliqueFn::Discrete(table)]).unwrap();
    for s0 in 0..3usize {
        for s1 in 0..3usize {
            let x = BTreeMap::from([(0, s0), (1, s1)]);
            assert_eq!(f.eval_states(&x).unwrap(), (3 * s0 + s1) as f64);
        }
    }
}

#[test]
fn linear_curves_interpolate_exactly() {
    // The identity curve has knot i at i/(knots−1), so interpolation must
    // give the input back; a term averages its members' curves.
    let identity: Vec<f64> = (0..PWL_KNOTS).map(|i| i as f64 / (PWL_KNOTS - 1) as f64).collect();
    let flat = vec![0.25; PWL_KNOTS];
    let g = Graph::new(vec![0, 1], vec![(0, 1)]).unwrap();
    let pwl = PiecewiseLinear { lipschitz: 1.0, knots: vec![identity, flat] };
    let f = CompatibleFunction::new(g, vec![CliqueFn::Continuous(pwl)]).unwrap();

    for k in 0..=32 {
        let x = k as f64 / 32.0;
        let got = f.eval_reals(&BTreeMap::from([(0, x), (1, 0.9)])).unwrap();
        let want = (x + 0.25) / 2.0;
        assert!((got - want).abs() <= 1e-12, "x={x}: {got} vs {want}");
    }
}

#[test]
fn sampled_continuous_terms_stay_bounded_and_lipschitz() {
    let mut rng = ChaCha20Rng::seed_from_u64(54);
    let g = fig_graph();
    for &lip in &[0.0, 0.5, 2.0] {
        let f = sample_random_compatible(&g, SampleMode::Continuous { lipschitz: lip }, 9);
        for _ in 0..50 {
            let x = random_reals(&mut rng, &g);
            let y = random_reals(&mut rng, &g);
            for idx in 0..f.cliques().len() {
                let fx = f.term(idx, &x).unwrap();
                let fy = f.term(idx, &y).unwrap();
                assert!((0.0..=1.0).contains(&fx), "term out of [0,1]: {fx}");
                let dist = f.cliques()[idx]
                    .iter()
                    .map(|v| {
                        let (Value::Real(a), Value::Real(b)) = (&x[&v], &y[&v]) else {
                            unreachable!()
                        };
                        (a - b).abs()
                    })
                    .fold(0.0f64, f64::max);
                assert!(
                    (fx - fy).abs() <= lip * dist + 1e-12,
                    "Lipschitz break: |{fx} − {fy}| over distance {dist} at L={lip}"
                );
            }
        }
    }
}

#[test]
fn construction_rejects_malformed_terms() {
    let g = || Graph::new(vec![0, 1], vec![(0, 1)]).unwrap();

    let short = DiscreteTable { domain: 2, entries: vec![0.0; 3] };
    assert!(matches!(
        CompatibleFunction::new(g(), vec![CliqueFn::Discrete(short)]),
        Err(PgmError::TableSize { clique: 0, got: 3, want: 4 })
    ));

    let nan = DiscreteTable { domain: 2, entries: vec![0.0, 1.0, f64::NAN, 0.5] };
    assert!(matches!(
        CompatibleFunction::new(g(), vec![CliqueFn::Discrete(nan)]),
        Err(PgmError::NonFiniteEntry { clique: 0 })
    ));

    let empty = DiscreteTable { domain: 0, entries: vec![] };
    assert!(matches!(
        CompatibleFunction::new(g(), vec![CliqueFn::Discrete(empty)]),
        Err(PgmError::EmptyDomain)
    ));

    assert!(matches!(
        CompatibleFunction::new(g(), vec![]),
        Err(PgmError::CliquesNotMaximal)
    ));

    let lopsided = PiecewiseLinear { lipschitz: 1.0, knots: vec![vec![0.0; PWL_KNOTS]] };
    assert!(CompatibleFunction::new(g(), vec![CliqueFn::Continuous(lopsided)]).is_err());
}

#[test]
fn evaluation_rejects_malformed_assignments() {
    let g = Graph::new(vec![0, 1], vec![(0, 1)]).unwrap();
    let table = DiscreteTable { domain: 2, entries: vec![0.0, 1.0, 2.0, 3.0] };
    let f = CompatibleFunction::new(g, vec![CliqueFn::Discrete(table)]).unwrap();

    let missing: Assignment = BTreeMap::from([(0, Value::State(1))]);
    assert!(matches!(f.term(0, &missing), Err(PgmError::MissingValue(1))));

    let wrong_kind: Assignment =
        BTreeMap::from([(0, Value::State(1)), (1, Value::Real(0.5))]);
    assert!(matches!(
        f.term(0, &wrong_kind),
        Err(PgmError::WrongValueKind { node: 1, got: "real", want: "state" })
    ));

    let out_of_range: Assignment =
        BTreeMap::from([(0, Value::State(1)), (1, Value::State(5))]);
    assert!(matches!(
        f.term(0, &out_of_range),
        Err(PgmError::StateOutOfRange { node: 1, got: 5, domain: 2 })
    ));

    let g = Graph::new(vec![0], vec![]).unwrap();
    let pwl = PiecewiseLinear { lipschitz: 1.0, knots: vec![vec![0.5; PWL_KNOTS]] };
    let f = CompatibleFunction::new(g, vec![CliqueFn::Continuous(pwl)]).unwrap();
    let hot: Assignment = BTreeMap::from([(0, Value::Real(1.5))]);
    assert!(matches!(f.term(0, &hot), Err(PgmError::RealOutOfRange { node: 0, .. })));
}

#[test]
fn factorize_reports_cliques_no_bag_can_hold() {
    // A triangle's only clique is all three nodes; a two-bag edge cover
    // cannot hold it.
    let g = Graph::new(vec![0, 1, 2], vec![(0, 1), (0, 2), (1, 2)]).unwrap();
    let f = sample_random_compatible(&g, SampleMode::Discrete { domain: 2 }, 1);
    let skinny = TreeDecomposition::new(
        vec![NodeSet::new(vec![0, 1]), NodeSet::new(vec![1, 2])],
        vec![(0, 1)],
        3,
    )
    .unwrap();
    assert!(matches!(factorize(&f, &skinny), Err(PgmError::UnassignableClique(0))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn factorization_reconstructs_on_arbitrary_graphs(
        seed in any::<u64>(),
        n in 1usize..=10,
        density in 0.0f64..=1.0,
        domain in 2usize..=3,
    ) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, density);
        let td = junction_tree(&g);
        let f = sample_random_compatible(&g, SampleMode::Discrete { domain }, seed);
        let x = random_states(&mut rng, &g, domain);
        prop_assert!(reconstruction_gap(&f, &td, &x) <= 1e-12);
    }
}
