//! Integration coverage for the graph container: construction rules, the
//! JSON codec, and the structural queries everything downstream leans on.

mod common;

use common::{complete_graph, cycle_graph, fig_graph, path_graph, random_graph};
use neural_tree::graph::{
    dataset_from_jsonl, dataset_to_jsonl, Graph, GraphError, NodeSet,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;

#[test]
fn construction_enforces_edge_conventions() {
    assert!(matches!(
        Graph::new(vec![0, 1], vec![(1, 1)]),
        Err(GraphError::SelfLoop(1))
    ));
    assert!(matches!(
        Graph::new(vec![0, 1], vec![(0, 1), (0, 1)]),
        Err(GraphError::DuplicateEdge(0, 1))
    ));
    assert!(matches!(
        Graph::new(vec![0, 1], vec![(0, 2)]),
        Err(GraphError::UnknownNode(2))
    ));
    assert!(matches!(
        Graph::new(vec![0, 0], vec![]),
        Err(GraphError::DuplicateNode(0))
    ));
}

#[test]
fn metadata_must_cover_all_nodes_or_none() {
    let g = Graph::new(vec![0, 1, 2], vec![(0, 1)]).unwrap();
    let partial: BTreeMap<_, _> = [(0, vec![1.0])].into();
    assert!(matches!(
        g.clone().with_features(partial),
        Err(GraphError::PartialFeatures(_))
    ));
    let full: BTreeMap<_, _> = [(0, vec![1.0]), (1, vec![2.0]), (2, vec![3.0])].into();
    let g = g.with_features(full).unwrap();
    assert_eq!(g.feature_dim(), Some(1));

    let ragged: BTreeMap<_, _> = [(0, vec![1.0]), (1, vec![2.0, 3.0]), (2, vec![4.0])].into();
    assert!(matches!(
        Graph::new(vec![0, 1, 2], vec![]).unwrap().with_features(ragged),
        Err(GraphError::FeatureDim { node: 1, got: 2, expected: 1 })
    ));
}

#[test]
fn json_round_trip_preserves_everything() {
    let g = fig_graph()
        .with_features((1..=5).map(|v| (v, vec![v as f64 * 0.125, -1.0])).collect())
        .unwrap()
        .with_labels((1..=5).map(|v| (v, v % 3)).collect())
        .unwrap()
        .with_node_types((1..=5).map(|v| (v, v % 2)).collect())
        .unwrap()
        .with_targets((1..=5).map(|v| (v, 0.1 + v as f64)).collect())
        .unwrap();
    let text = g.to_json_string();
    let back = Graph::from_json_str(&text).unwrap();
    assert_eq!(back, g);
    // Serialization is canonical: encoding the decoded graph is byte-stable.
    assert_eq!(back.to_json_string(), text);
}

#[test]
fn jsonl_dataset_round_trip() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let graphs: Vec<Graph> = (0..8)
        .map(|i| {
            let g = random_graph(&mut rng, 4 + i % 3, 0.5);
            let labels = g.nodes().iter().map(|&v| (v, v % 2)).collect();
            g.with_labels(labels).unwrap()
        })
        .collect();
    let text = dataset_to_jsonl(&graphs);
    assert_eq!(text.lines().count(), graphs.len());
    assert_eq!(dataset_from_jsonl(&text).unwrap(), graphs);
}

#[test]
fn malformed_documents_decode_to_errors() {
    for text in [
        "",
        "{",
        "[]",
        r#"{"nodes": [1, 2], "edges": [[1]]}"#,   // edge is not a pair
        r#"{"nodes": [{"id":1}], "edges": [[1,1]]}"#, // self-loop
        r#"{"nodes": [{"id":1}], "edges": [[2,1]]}"#, // order violation
    ] {
        assert!(Graph::from_json_str(text).is_err(), "accepted: {text:?}");
    }
}

#[test]
fn neighbor_queries_match_edge_list() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for _ in 0..20 {
        let g = random_graph(&mut rng, 12, 0.3);
        for (u, v) in g.edges() {
            assert!(u < v);
            assert!(g.has_edge(u, v));
            assert!(g.has_edge(v, u));
            assert!(g.neighbors(u).any(|w| w == v));
            assert!(g.neighbors(v).any(|w| w == u));
        }
        let count: usize = g.nodes().iter().map(|&v| g.degree(v)).sum();
        assert_eq!(count, 2 * g.num_edges());
    }
}

#[test]
fn maximal_cliques_on_known_graphs() {
    let path = path_graph(4);
    let cliques = path.maximal_cliques().unwrap();
    assert_eq!(
        cliques,
        vec![
            NodeSet::new(vec![0, 1]),
            NodeSet::new(vec![1, 2]),
            NodeSet::new(vec![2, 3])
        ]
    );

    let k4 = complete_graph(4);
    assert_eq!(k4.maximal_cliques().unwrap(), vec![NodeSet::new(vec![0, 1, 2, 3])]);

    let fig = fig_graph();
    assert_eq!(
        fig.maximal_cliques().unwrap(),
        vec![
            NodeSet::new(vec![1, 2, 3]),
            NodeSet::new(vec![2, 3, 4]),
            NodeSet::new(vec![3, 4, 5])
        ]
    );
}

#[test]
fn maximal_cliques_are_maximal_and_cover_edges() {
    let mut rng = ChaCha20Rng::seed_from_u64(23);
    for _ in 0..25 {
        let g = random_graph(&mut rng, 10, 0.45);
        let cliques = g.maximal_cliques().unwrap();
        // Every edge is inside some clique; isolated nodes form their own.
        for (u, v) in g.edges() {
            assert!(cliques.iter().any(|c| c.contains(u) && c.contains(v)));
        }
        for &v in g.nodes() {
            assert!(cliques.iter().any(|c| c.contains(v)));
        }
        // Each clique is complete and inextensible.
        for c in &cliques {
            let sub = g.induced_subgraph(c).unwrap();
            assert!(sub.is_complete());
            for &v in g.nodes() {
                if !c.contains(v) {
                    assert!(
                        !c.iter().all(|u| g.has_edge(u, v)),
                        "clique {c:?} extensible by {v}"
                    );
                }
            }
        }
    }
}

#[test]
fn induced_subgraph_restricts_metadata() {
    let g = fig_graph()
        .with_features((1..=5).map(|v| (v, vec![v as f64])).collect())
        .unwrap()
        .with_labels((1..=5).map(|v| (v, v)).collect())
        .unwrap()
        .with_targets((1..=5).map(|v| (v, f64::from(v))).collect())
        .unwrap();
    let sub = g.induced_subgraph(&NodeSet::new(vec![2, 3, 4])).unwrap();
    assert_eq!(sub.nodes(), &[2, 3, 4]);
    assert_eq!(sub.edges(), vec![(2, 3), (2, 4), (3, 4)]);
    assert_eq!(sub.features().unwrap().len(), 3);
    assert_eq!(sub.labels().unwrap()[&4], 4);
    assert_eq!(sub.targets().unwrap()[&3], 3.0);

    assert!(matches!(
        g.induced_subgraph(&NodeSet::new(vec![2, 9])),
        Err(GraphError::UnknownNode(9))
    ));
}

#[test]
fn components_and_diameter() {
    let g = Graph::new(vec![0, 1, 2, 3, 4], vec![(0, 1), (1, 2), (3, 4)]).unwrap();
    let comps = g.connected_components();
    assert_eq!(comps, vec![NodeSet::new(vec![0, 1, 2]), NodeSet::new(vec![3, 4])]);

    assert_eq!(path_graph(6).diameter().unwrap(), 5);
    assert_eq!(cycle_graph(6).diameter().unwrap(), 3);
    assert_eq!(complete_graph(5).diameter().unwrap(), 1);
}
