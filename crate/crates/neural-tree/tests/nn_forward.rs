//! Forward-pass behavior of the two architectures: output coverage and
//! shapes, head routing by node type, the two link-flavor scalars, input
//! validation, checkpoint round trips, and the loss/accuracy arithmetic.

mod common;

use std::collections::BTreeMap;

use common::{fig_graph, random_graph};
use neural_tree::graph::{Graph, NodeId};
use neural_tree::htree::build_htree;
use neural_tree::nn::{
    accuracy, baseline_gnn_forward, data_loss, loss, nt_forward, nt_hidden_states,
    AggregatorKind, HeadKind, ModelConfig, ModelParams, NnError, Targets, CHECKPOINT_FORMAT,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn config(aggregator: AggregatorKind, head: HeadKind) -> ModelConfig {
    ModelConfig {
        aggregator,
        head,
        input_dim: 3,
        hidden_dim: 4,
        iterations: 2,
        dropout: 0.0,
        edge_scalars: false,
        head_types: vec![0],
    }
}

fn features(g: &Graph, seed: u64) -> BTreeMap<NodeId, Vec<f64>> {
    use rand::Rng;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    g.nodes().iter().map(|&v| (v, (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())).collect()
}

#[test]
fn outputs_cover_every_source_node() {
    let g = fig_graph();
    let h = build_htree(&g).unwrap();
    let x = features(&g, 1);
    for aggregator in [AggregatorKind::GcnMean, AggregatorKind::ShallowRelu] {
        for head in [HeadKind::Classification { num_classes: 3 }, HeadKind::Regression] {
            let p = ModelParams::init(config(aggregator, head), 7).unwrap();
            for out in [nt_forward(&h, &p, &x).unwrap(), baseline_gnn_forward(&g, &p, &x).unwrap()]
            {
                assert_eq!(out.keys().copied().collect::<Vec<_>>(), g.nodes());
                for probs in out.values() {
                    assert_eq!(probs.len(), head.output_dim());
                    assert!(probs.iter().all(|v| v.is_finite()));
                    if matches!(head, HeadKind::Classification { .. }) {
                        assert!(probs.iter().all(|&v| v >= 0.0));
                        assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn forward_passes_are_bitwise_deterministic() {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let g = random_graph(&mut rng, 9, 0.4);
    let h = build_htree(&g).unwrap();
    let x = features(&g, 3);
    let p = ModelParams::init(
        config(AggregatorKind::ShallowRelu, HeadKind::Classification { num_classes: 4 }),
        11,
    )
    .unwrap();
    let bits = |out: BTreeMap<NodeId, Vec<f64>>| -> Vec<u64> {
        out.into_values().flatten().map(f64::to_bits).collect()
    };
    assert_eq!(bits(nt_forward(&h, &p, &x).unwrap()), bits(nt_forward(&h, &p, &x).unwrap()));
    assert_eq!(
        bits(baseline_gnn_forward(&g, &p, &x).unwrap()),
        bits(baseline_gnn_forward(&g, &p, &x).unwrap())
    );
}

#[test]
fn heads_route_by_node_type() {
    // With every weight zeroed the output depends only on the head biases,
    // so distinct biases per type expose the routing directly.
    let g = Graph::new(vec![0, 1], vec![(0, 1)])
        .unwrap()
        .with_node_types(BTreeMap::from([(0, 0), (1, 1)]))
        .unwrap();
    let mut cfg = config(AggregatorKind::GcnMean, HeadKind::Regression);
    cfg.head_types = vec![0, 1];
    let mut p = ModelParams::zeros(cfg).unwrap();
    p.heads[0].1.bias = vec![0.25];
    p.heads[1].1.bias = vec![-2.0];

    let x = features(&g, 4);
    let h = build_htree(&g).unwrap();
    for out in [baseline_gnn_forward(&g, &p, &x).unwrap(), nt_forward(&h, &p, &x).unwrap()] {
        assert_eq!(out[&0], vec![0.25]);
        assert_eq!(out[&1], vec![-2.0]);
    }

    // Untyped graphs read head 0 for everyone.
    let bare = Graph::new(vec![0, 1], vec![(0, 1)]).unwrap();
    let out = baseline_gnn_forward(&bare, &p, &x).unwrap();
    assert_eq!(out[&0], vec![0.25]);
    assert_eq!(out[&1], vec![0.25]);

    // A type with no head is an error, not a silent fallback.
    let exotic = Graph::new(vec![0, 1], vec![(0, 1)])
        .unwrap()
        .with_node_types(BTreeMap::from([(0, 0), (1, 5)]))
        .unwrap();
    assert!(matches!(
        baseline_gnn_forward(&exotic, &p, &x),
        Err(NnError::MissingHead(5))
    ));
}

#[test]
fn link_scalars_touch_only_their_flavor() {
    let g = fig_graph();
    let h = build_htree(&g).unwrap();
    let x = features(&g, 5);
    let mut cfg = config(AggregatorKind::ShallowRelu, HeadKind::Regression);
    cfg.edge_scalars = true;
    // Three rounds so a cross-root exchange can reach a leaf readout:
    // leaves feed the roots, roots trade, roots feed the leaves back.
    cfg.iterations = 3;
    let p = ModelParams::init(cfg, 13).unwrap();

    let flat = |out: BTreeMap<NodeId, Vec<f64>>| -> Vec<f64> {
        out.into_values().flatten().collect()
    };

    let mut scaled = p.clone();
    scaled.edge_scalars.as_mut().unwrap()[1].root = 0.0;
    // Root-to-root links exist only inside the H-tree, so zeroing their
    // scale changes the tree pass…
    assert_ne!(flat(nt_forward(&h, &p, &x).unwrap()), flat(nt_forward(&h, &scaled, &x).unwrap()));
    // …and leaves the plain-graph pass untouched (all its links are
    // parent/child flavored).
    assert_eq!(
        flat(baseline_gnn_forward(&g, &p, &x).unwrap()),
        flat(baseline_gnn_forward(&g, &scaled, &x).unwrap())
    );

    let mut scaled = p.clone();
    scaled.edge_scalars.as_mut().unwrap()[0].child = 0.5;
    assert_ne!(
        flat(baseline_gnn_forward(&g, &p, &x).unwrap()),
        flat(baseline_gnn_forward(&g, &scaled, &x).unwrap())
    );
}

#[test]
fn hidden_states_cover_the_whole_tree() {
    let g = fig_graph();
    let h = build_htree(&g).unwrap();
    let p = ModelParams::init(config(AggregatorKind::GcnMean, HeadKind::Regression), 3).unwrap();
    let states = nt_hidden_states(&h, &p, &features(&g, 6)).unwrap();
    assert_eq!(states.len(), h.num_nodes());
    assert!(states.iter().all(|s| s.len() == 4));
}

#[test]
fn malformed_inputs_are_rejected() {
    let g = fig_graph();
    let h = build_htree(&g).unwrap();
    let p = ModelParams::init(config(AggregatorKind::GcnMean, HeadKind::Regression), 9).unwrap();

    let mut x = features(&g, 7);
    x.remove(&3);
    assert!(matches!(nt_forward(&h, &p, &x), Err(NnError::MissingFeature(3))));

    let mut x = features(&g, 7);
    x.insert(2, vec![1.0]);
    assert!(matches!(
        baseline_gnn_forward(&g, &p, &x),
        Err(NnError::FeatureDim { node: 2, got: 1, want: 3 })
    ));

    // Configurations that cannot describe a model are refused up front.
    let broken = [
        ModelConfig { iterations: 0, ..config(AggregatorKind::GcnMean, HeadKind::Regression) },
        ModelConfig { hidden_dim: 0, ..config(AggregatorKind::GcnMean, HeadKind::Regression) },
        ModelConfig { dropout: 1.0, ..config(AggregatorKind::GcnMean, HeadKind::Regression) },
        ModelConfig {
            head: HeadKind::Classification { num_classes: 1 },
            ..config(AggregatorKind::GcnMean, HeadKind::Regression)
        },
        ModelConfig { head_types: vec![], ..config(AggregatorKind::GcnMean, HeadKind::Regression) },
        ModelConfig {
            head_types: vec![1, 1],
            ..config(AggregatorKind::GcnMean, HeadKind::Regression)
        },
    ];
    for cfg in broken {
        assert!(ModelParams::init(cfg, 1).is_err());
    }
}

#[test]
fn checkpoints_round_trip_and_validate() {
    let mut cfg = config(AggregatorKind::ShallowRelu, HeadKind::Classification { num_classes: 3 });
    cfg.edge_scalars = true;
    cfg.head_types = vec![0, 2];
    let p = ModelParams::init(cfg, 21).unwrap();

    let text = p.to_json_string();
    let back = ModelParams::from_json_str(&text).unwrap();
    assert_eq!(back, p);
    assert_eq!(back.to_json_string(), text, "canonical re-encode is byte-stable");

    // A wrong format tag, truncation, and shape corruption all fail loudly.
    let tampered = text.replace(CHECKPOINT_FORMAT, "neural-tree-checkpoint-v0");
    assert!(matches!(ModelParams::from_json_str(&tampered), Err(NnError::Decode(_))));
    assert!(ModelParams::from_json_str(&text[..text.len() / 2]).is_err());
    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["heads"][0]["bias"] = serde_json::json!([0.0]);
    assert!(ModelParams::from_json_str(&doc.to_string()).is_err());
}

#[test]
fn loss_and_accuracy_match_hand_arithmetic() {
    let outputs = BTreeMap::from([(0u32, vec![0.8, 0.2]), (1u32, vec![0.3, 0.7])]);
    let labels = BTreeMap::from([(0u32, 0usize), (1u32, 0usize)]);
    let want = -(0.8f64.ln() + 0.3f64.ln()) / 2.0;
    let got = data_loss(&outputs, &Targets::Labels(labels.clone())).unwrap();
    assert!((got - want).abs() <= 1e-12);
    assert_eq!(accuracy(&outputs, &labels).unwrap(), 0.5);

    let outputs = BTreeMap::from([(0u32, vec![2.0]), (1u32, vec![-1.0])]);
    let values = BTreeMap::from([(0u32, 1.5), (1u32, -1.0)]);
    let got = data_loss(&outputs, &Targets::Values(values.clone())).unwrap();
    assert!((got - 0.125).abs() <= 1e-12, "mean of 0.25 and 0");

    // The ridge term rides on top of the data term.
    let p = ModelParams::init(config(AggregatorKind::GcnMean, HeadKind::Regression), 2).unwrap();
    let with_ridge = loss(&outputs, &Targets::Values(values), 0.01, &p).unwrap();
    assert!((with_ridge - (got + 0.01 * p.squared_norm())).abs() <= 1e-12);

    // Supervision naming a node with no output is an error.
    let outputs = BTreeMap::from([(0u32, vec![0.9, 0.1])]);
    let stray = Targets::Labels(BTreeMap::from([(9u32, 0usize)]));
    assert!(matches!(data_loss(&outputs, &stray), Err(NnError::MissingOutput(9))));
    let wide = Targets::Labels(BTreeMap::from([(0u32, 4usize)]));
    assert!(matches!(
        data_loss(&outputs, &wide),
        Err(NnError::LabelOutOfRange { node: 0, got: 4, classes: 2 })
    ));
}
