//! Parameter-count estimates: hand-computed goldens on small graphs, the
//! closed-form corollary, monotonicity in every argument, and argument
//! validation.

mod common;

use common::{complete_graph, fig_graph, random_graph};
use neural_tree::graph::Graph;
use neural_tree::htree::{
    build_htree, param_bound_corollary, param_bound_theorem, HtreeError,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

#[test]
fn triangle_and_single_edge_match_hand_computation() {
    // A triangle is one bag with three leaves: one aggregation node of
    // fan-in 3, contributing 3 · (ε/3)^(−3) = 3 · 6³ = 648 at ε = ½.
    let h = build_htree(&complete_graph(3)).unwrap();
    let got = param_bound_theorem(&h, 0.5).unwrap();
    assert!(close(got, 648.0), "triangle: {got}");

    // A single edge is one bag with two leaves: 2 · (ε/2)^(−2) = 2 · 4² = 32.
    let h = build_htree(&Graph::new(vec![0, 1], vec![(0, 1)]).unwrap()).unwrap();
    let got = param_bound_theorem(&h, 0.5).unwrap();
    assert!(close(got, 32.0), "edge: {got}");
}

#[test]
fn reference_graph_bound_sums_root_contributions() {
    // Each of the three root bags has three leaf children; links between
    // roots carry no aggregation unit, so every root has fan-in 3 and the
    // total is 3 · 648 = 1944 at ε = ½.
    let h = build_htree(&fig_graph()).unwrap();
    let got = param_bound_theorem(&h, 0.5).unwrap();
    assert!(close(got, 1944.0), "reference graph: {got}");
}

#[test]
fn four_cycle_bound_counts_inner_nodes() {
    // The 4-cycle's H-tree has two roots and four inner bags, all of
    // fan-in 2 (the parent link never counts): 6 · 2 · (ε/2)^(−2) = 192.
    let g = Graph::new(vec![0, 1, 2, 3], vec![(0, 1), (0, 3), (1, 2), (2, 3)]).unwrap();
    let h = build_htree(&g).unwrap();
    let got = param_bound_theorem(&h, 0.5).unwrap();
    assert!(close(got, 192.0), "4-cycle: {got}");
}

#[test]
fn corollary_matches_the_closed_form() {
    // n · (tw+1)^(2·tw+3) · ε^(−(tw+1)); at (5, 2, ½) that is
    // 5 · 3⁷ · 2³ = 5 · 2187 · 8 = 87480, and the arithmetic is exact.
    assert_eq!(param_bound_corollary(5, 2, 0.5).unwrap(), 87480.0);
    assert_eq!(param_bound_corollary(1, 0, 1.0).unwrap(), 1.0);
    // 10 · 2⁵ · ½^(−2) = 10 · 32 · 4.
    assert_eq!(param_bound_corollary(10, 1, 0.5).unwrap(), 1280.0);
}

#[test]
fn bounds_move_the_right_way() {
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let g = random_graph(&mut rng, 10, 0.4);
    let h = build_htree(&g).unwrap();
    let grid = [0.1, 0.3, 0.5, 1.0];
    for w in grid.windows(2) {
        let lo = param_bound_theorem(&h, w[0]).unwrap();
        let hi = param_bound_theorem(&h, w[1]).unwrap();
        assert!(lo > hi, "theorem bound must shrink as ε grows: {lo} vs {hi}");
        let lo = param_bound_corollary(8, 3, w[0]).unwrap();
        let hi = param_bound_corollary(8, 3, w[1]).unwrap();
        assert!(lo > hi, "corollary must shrink as ε grows: {lo} vs {hi}");
    }
    // ... and grow with graph size and width.
    assert!(param_bound_corollary(9, 3, 0.5).unwrap() > param_bound_corollary(8, 3, 0.5).unwrap());
    assert!(param_bound_corollary(8, 4, 0.5).unwrap() > param_bound_corollary(8, 3, 0.5).unwrap());
}

#[test]
fn invalid_arguments_are_refused() {
    let h = build_htree(&complete_graph(3)).unwrap();
    assert!(matches!(param_bound_theorem(&h, 0.0), Err(HtreeError::NonPositiveEps(_))));
    assert!(matches!(param_bound_theorem(&h, -1.0), Err(HtreeError::NonPositiveEps(_))));
    assert!(matches!(param_bound_corollary(0, 2, 0.5), Err(HtreeError::ZeroNodes(0))));
    assert!(matches!(param_bound_corollary(5, 2, 0.0), Err(HtreeError::EpsOutOfRange(_))));
    assert!(matches!(param_bound_corollary(5, 2, 1.5), Err(HtreeError::EpsOutOfRange(_))));
    assert!(matches!(param_bound_corollary(5, 2, -0.2), Err(HtreeError::EpsOutOfRange(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The closed form is linear in n, and the structural bound is a positive
    /// finite number for any admissible ε.
    #[test]
    fn bound_scaling(n in 1usize..=500, tw in 0usize..=6, eps in 0.05f64..=1.0) {
        let single = param_bound_corollary(n, tw, eps).unwrap();
        let doubled = param_bound_corollary(2 * n, tw, eps).unwrap();
        prop_assert!(close(doubled, 2.0 * single));
        prop_assert!(single.is_finite() && single > 0.0);

        let mut rng = ChaCha20Rng::seed_from_u64(n as u64);
        let g = random_graph(&mut rng, 1 + tw, 0.5);
        let bound = param_bound_theorem(&build_htree(&g).unwrap(), eps).unwrap();
        prop_assert!(bound.is_finite() && bound > 0.0);
    }
}
