//! Exact inference on discrete models: the message-passing marginals must
//! match full enumeration to high precision, best labelings must actually
//! maximize the model score, moralization must marry co-parents, and the
//! model document must survive a round trip.

mod common;

use std::collections::BTreeMap;

use common::random_graph;
use neural_tree::graph::{Graph, NodeId};
use neural_tree::pgm::{
    brute_force_marginals, junction_tree_marginals, map_labels, moralize,
    sample_random_compatible, CliqueFn, CompatibleFunction, DiscretePgm, DiscreteTable,
    PgmError, SampleMode,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn random_model(seed: u64, n: usize, density: f64, domain: usize) -> DiscretePgm {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let g = random_graph(&mut rng, n, density);
    DiscretePgm::new(sample_random_compatible(&g, SampleMode::Discrete { domain }, seed))
        .unwrap()
}

fn max_marginal_gap(m: &DiscretePgm) -> f64 {
    let brute = brute_force_marginals(m).unwrap();
    let jt = junction_tree_marginals(m).unwrap();
    assert_eq!(brute.keys().collect::<Vec<_>>(), jt.keys().collect::<Vec<_>>());
    let mut gap = 0.0f64;
    for (v, b) in &brute {
        let j = &jt[v];
        assert_eq!(b.len(), j.len(), "node {v}: marginal lengths differ");
        assert!((b.iter().sum::<f64>() - 1.0).abs() <= 1e-9, "node {v}: not normalized");
        assert!(j.iter().all(|&p| (0.0..=1.0 + 1e-12).contains(&p)));
        for (x, y) in b.iter().zip(j) {
            gap = gap.max((x - y).abs());
        }
    }
    gap
}

#[test]
fn message_passing_matches_enumeration() {
    for case in 0..40u64 {
        let n = 2 + (case as usize) % 9;
        let domain = 2 + (case as usize) % 2;
        let density = 0.2 + 0.15 * ((case as usize) % 5) as f64;
        let m = random_model(case, n, density, domain);
        let gap = max_marginal_gap(&m);
        assert!(gap <= 1e-9, "case {case} (n={n}, domain={domain}): gap {gap}");
    }
}

#[test]
fn two_node_marginals_match_hand_arithmetic() {
    // p(x₀, x₁) ∝ exp t[x₀, x₁] on a single edge; normalize by hand.
    let g = Graph::new(vec![0, 1], vec![(0, 1)]).unwrap();
    let t = vec![0.2, -0.4, 1.1, 0.7]; // row-major over (x₀, x₁)
    let table = DiscreteTable { domain: 2, entries: t.clone() };
    let m =
        DiscretePgm::new(CompatibleFunction::new(g, vec![CliqueFn::Discrete(table)]).unwrap())
            .unwrap();

    let w: Vec<f64> = t.iter().map(|&e| e.exp()).collect();
    let z: f64 = w.iter().sum();
    let want0 = [(w[0] + w[1]) / z, (w[2] + w[3]) / z];
    let want1 = [(w[0] + w[2]) / z, (w[1] + w[3]) / z];

    for marginals in [brute_force_marginals(&m).unwrap(), junction_tree_marginals(&m).unwrap()]
    {
        for (s, &want) in want0.iter().enumerate() {
            assert!((marginals[&0][s] - want).abs() <= 1e-12);
        }
        for (s, &want) in want1.iter().enumerate() {
            assert!((marginals[&1][s] - want).abs() <= 1e-12);
        }
    }
}

#[test]
fn disconnected_models_infer_per_component() {
    // An edge plus an isolated node; the latter's marginal comes straight
    // from its singleton table.
    let g = Graph::new(vec![0, 1, 7], vec![(0, 1)]).unwrap();
    let m = DiscretePgm::new(sample_random_compatible(&g, SampleMode::Discrete { domain: 3 }, 4))
        .unwrap();
    assert!(max_marginal_gap(&m) <= 1e-9);

    let CliqueFn::Discrete(solo) = &m.function().clique_fns()[1] else { unreachable!() };
    assert_eq!(m.function().cliques()[1].as_slice(), &[7]);
    let w: Vec<f64> = solo.entries.iter().map(|&e| e.exp()).collect();
    let z: f64 = w.iter().sum();
    let jt = junction_tree_marginals(&m).unwrap();
    for s in 0..3 {
        assert!((jt[&7][s] - w[s] / z).abs() <= 1e-12);
    }
}

#[test]
fn best_labeling_maximizes_the_score() {
    for case in 0..12u64 {
        let n = 2 + (case as usize) % 5;
        let domain = 2 + (case as usize) % 2;
        let m = random_model(1000 + case, n, 0.5, domain);
        let labels = map_labels(&m).unwrap();
        let score = m.function().eval_states(&labels).unwrap();

        // Exhaustively check nothing beats it.
        let nodes: Vec<NodeId> = m.source_graph().nodes().to_vec();
        let mut states = vec![0usize; nodes.len()];
        loop {
            let x: BTreeMap<NodeId, usize> =
                nodes.iter().copied().zip(states.iter().copied()).collect();
            let s = m.function().eval_states(&x).unwrap();
            assert!(s <= score + 1e-12, "case {case}: {x:?} scores {s} > {score}");
            // Odometer over the positional states, last position fastest.
            let mut pos = nodes.len();
            loop {
                if pos == 0 {
                    break;
                }
                states[pos - 1] += 1;
                if states[pos - 1] < domain {
                    break;
                }
                states[pos - 1] = 0;
                pos -= 1;
            }
            if pos == 0 {
                break;
            }
        }
    }

    // All-zero tables tie every assignment; the first one must win.
    let g = Graph::new(vec![0, 1, 2], vec![(0, 1), (1, 2)]).unwrap();
    let zeros = |k: usize| DiscreteTable { domain: 2, entries: vec![0.0; 1 << k] };
    let f = CompatibleFunction::new(g, vec![CliqueFn::Discrete(zeros(2)), CliqueFn::Discrete(zeros(2))])
        .unwrap();
    let labels = map_labels(&DiscretePgm::new(f).unwrap()).unwrap();
    assert!(labels.values().all(|&s| s == 0), "ties resolve to the first assignment");
}

#[test]
fn moralization_marries_coparents() {
    // A collider a → c ← b gains the (a, b) marriage edge…
    let parents = BTreeMap::from([(2, vec![0, 1])]);
    let moral = moralize(&parents).unwrap();
    assert_eq!(moral.edges(), vec![(0, 1), (0, 2), (1, 2)]);

    // …while a chain a → b → c keeps its skeleton only.
    let parents = BTreeMap::from([(1, vec![0]), (2, vec![1])]);
    let moral = moralize(&parents).unwrap();
    assert_eq!(moral.edges(), vec![(0, 1), (1, 2)]);

    // Three parents marry pairwise.
    let parents = BTreeMap::from([(9, vec![0, 1, 2])]);
    let moral = moralize(&parents).unwrap();
    assert_eq!(
        moral.edges(),
        vec![(0, 1), (0, 2), (0, 9), (1, 2), (1, 9), (2, 9)]
    );

    // Directed cycles cannot be a model structure.
    let parents = BTreeMap::from([(0, vec![1]), (1, vec![0])]);
    assert!(matches!(moralize(&parents), Err(PgmError::CyclicInput)));
}

#[test]
fn enumeration_guard_trips_where_message_passing_still_works() {
    // 25 binary nodes on a path: 2²⁵ joint states is past the enumeration
    // guard, but the bag state spaces stay tiny.
    let n = 25u32;
    let g = Graph::new(
        (0..n).collect(),
        (0..n - 1).map(|v| (v, v + 1)).collect(),
    )
    .unwrap();
    let m = DiscretePgm::new(sample_random_compatible(&g, SampleMode::Discrete { domain: 2 }, 8))
        .unwrap();
    assert!(matches!(brute_force_marginals(&m), Err(PgmError::StateSpaceTooLarge(_))));

    let jt = junction_tree_marginals(&m).unwrap();
    assert_eq!(jt.len(), n as usize);
    for p in jt.values() {
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    // With all-zero potentials the exact answer is uniform, guard or not.
    let zeros: Vec<CliqueFn> = (0..n - 1)
        .map(|_| CliqueFn::Discrete(DiscreteTable { domain: 2, entries: vec![0.0; 4] }))
        .collect();
    let g = Graph::new((0..n).collect(), (0..n - 1).map(|v| (v, v + 1)).collect()).unwrap();
    let m = DiscretePgm::new(CompatibleFunction::new(g, zeros).unwrap()).unwrap();
    let jt = junction_tree_marginals(&m).unwrap();
    for p in jt.values() {
        assert!((p[0] - 0.5).abs() <= 1e-12 && (p[1] - 0.5).abs() <= 1e-12);
    }
}

#[test]
fn mixed_or_mismatched_models_are_rejected() {
    let g = Graph::new(vec![0, 1, 2], vec![(0, 1), (1, 2)]).unwrap();
    let t2 = DiscreteTable { domain: 2, entries: vec![0.0; 4] };
    let t3 = DiscreteTable { domain: 3, entries: vec![0.0; 9] };
    let f = CompatibleFunction::new(
        g,
        vec![CliqueFn::Discrete(t2.clone()), CliqueFn::Discrete(t3)],
    )
    .unwrap();
    assert!(matches!(DiscretePgm::new(f), Err(PgmError::DomainMismatch(2, 3))));

    let g = Graph::new(vec![0], vec![]).unwrap();
    let f = sample_random_compatible(&g, SampleMode::Continuous { lipschitz: 1.0 }, 1);
    assert!(matches!(DiscretePgm::new(f), Err(PgmError::MixedTermKinds)));
}

#[test]
fn model_documents_round_trip() {
    let m = random_model(77, 6, 0.5, 3);
    let text = m.to_json_string();
    let back = DiscretePgm::from_json_str(&text).unwrap();
    assert_eq!(back.to_json_string(), text, "canonical re-encode is byte-stable");
    assert_eq!(back.domain(), m.domain());
    assert!(max_marginal_gap(&back) <= 1e-9);

    for bad in [
        "",                                             // not JSON
        "{}",                                           // missing fields
        r#"{"cliques":[[0,0]],"tables":{"0":[0,0]},"domain":2}"#, // repeated node
        r#"{"cliques":[[0,1]],"tables":{},"domain":2}"#,          // missing table
        r#"{"cliques":[[0,1]],"tables":{"0":[0,0]},"domain":2}"#, // short table
        r#"{"cliques":[[0,1]],"tables":{"0":[0,0,0,0]},"domain":0}"#, // zero domain
        r#"{"cliques":[[0],[0,1]],"tables":{"0":[0,0],"1":[0,0,0,0]},"domain":2}"#, // nested cliques
        r#"{"cliques":[[0,1]],"tables":{"0":[0,0,0,0]},"domain":2,"extra":1}"#, // unknown field
    ] {
        assert!(DiscretePgm::from_json_str(bad).is_err(), "accepted: {bad}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn marginal_paths_agree_on_arbitrary_models(
        seed in any::<u64>(),
        n in 1usize..=8,
        density in 0.0f64..=1.0,
        domain in 2usize..=3,
    ) {
        let m = random_model(seed, n, density, domain);
        prop_assert!(max_marginal_gap(&m) <= 1e-9);
    }
}
