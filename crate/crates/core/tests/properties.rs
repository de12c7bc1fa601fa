mod common;

use std::collections::VecDeque;

use common::*;
use gate::autodiff::Tape;
use gate::checkpoint::{read_checkpoint, write_checkpoint};
use gate::dataset::{load_dataset, save_dataset, Dataset};
use gate::graph::{induce_subgraph, FeatureMatrix, LabelVector, SparseGraph, SplitSpec};
use gate::model::{init_model, Activation};
use gate::probe::{fit_probe, ProbeConfig, RunStatistics};
use gate::train::{feature_loss, structure_loss};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn graph_strategy(max_nodes: usize) -> impl Strategy<Value = SparseGraph> {
    (1..=max_nodes).prop_flat_map(|n| {
        proptest::collection::vec((0..n, 0..n), 0..3 * n)
            .prop_map(move |edges| SparseGraph::from_edges(n, &edges).unwrap())
    })
}

fn activation_strategy() -> impl Strategy<Value = Activation> {
    prop_oneof![
        Just(Activation::Identity),
        Just(Activation::Tanh),
        Just(Activation::Sigmoid)
    ]
}

fn features_for(n: usize, f: usize, seed: u64) -> FeatureMatrix {
    random_features(&mut rng(seed), f, n)
}

fn hop_distances(g: &SparseGraph, source: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.num_nodes()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &v in g.neighbors(u) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn graphs_are_symmetric_with_self_loops(g in graph_strategy(12)) {
        for i in 0..g.num_nodes() {
            prop_assert!(g.contains_edge(i, i));
            for &j in g.neighbors(i) {
                prop_assert!(g.contains_edge(j, i));
            }
            prop_assert!(g.neighbors(i).windows(2).all(|w| w[0] < w[1]));
        }
        prop_assert_eq!(g.nnz(), g.num_nodes() + 2 * g.num_edges());
        let degree_sum: usize = (0..g.num_nodes()).map(|i| g.degree(i).unwrap()).sum();
        prop_assert_eq!(degree_sum, g.nnz());
        let (rows, cols) = (g.row_indices(), g.col_indices());
        for (e, &m) in g.mirror_indices().iter().enumerate() {
            prop_assert_eq!((rows[m], cols[m]), (cols[e], rows[e]));
        }
    }

    #[test]
    fn inducing_every_node_is_identity(g in graph_strategy(10), seed in any::<u64>()) {
        let x = features_for(g.num_nodes(), 3, seed);
        let all: Vec<usize> = (0..g.num_nodes()).collect();
        let sub = induce_subgraph(&g, &x, &all).unwrap();
        prop_assert_eq!(&sub.graph, &g);
        prop_assert_eq!(&sub.features, &x);
    }

    #[test]
    fn induced_subgraph_keeps_only_internal_edges(g in graph_strategy(10), mask in any::<u16>()) {
        let keep: Vec<usize> = (0..g.num_nodes()).filter(|i| mask >> i & 1 == 1).collect();
        prop_assume!(!keep.is_empty());
        let x = features_for(g.num_nodes(), 2, 0);
        let sub = induce_subgraph(&g, &x, &keep).unwrap();
        prop_assert_eq!(sub.graph.num_nodes(), keep.len());
        for (a, &oa) in keep.iter().enumerate() {
            for (b, &ob) in keep.iter().enumerate() {
                prop_assert_eq!(sub.graph.contains_edge(a, b), g.contains_edge(oa, ob));
            }
            prop_assert_eq!(sub.features.values().column(a), x.values().column(oa));
        }
    }

    #[test]
    fn softmax_ignores_per_row_shifts(g in graph_strategy(10), seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut r = rng(seed);
        let x: Array1<f64> = (0..g.nnz()).map(|_| rand::Rng::gen_range(&mut r, -3.0..3.0)).collect();
        let shifted: Array1<f64> = g.row_indices().iter().zip(&x).map(|(&i, v)| v + shift * (i as f64 + 1.0)).collect();
        let mut tape = Tape::new();
        let a = tape.edge_constant(x).unwrap();
        let b = tape.edge_constant(shifted).unwrap();
        let sa = tape.segment_softmax(a, &g).unwrap();
        let sb = tape.segment_softmax(b, &g).unwrap();
        for (p, q) in tape.edge(sa).iter().zip(tape.edge(sb)) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_permutation_equivariant(
        g in graph_strategy(9),
        seed in any::<u64>(),
        tied in any::<bool>(),
        activation in activation_strategy(),
        perm_seed in any::<u64>(),
    ) {
        let n = g.num_nodes();
        let x = features_for(n, 4, seed);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng(perm_seed));
        // node i is renamed perm[i]
        let edges: Vec<(usize, usize)> = g.edge_list().iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let pg = SparseGraph::from_edges(n, &edges).unwrap();
        let mut px = Array2::zeros((4, n));
        for i in 0..n {
            px.column_mut(perm[i]).assign(&x.values().column(i));
        }
        let px = FeatureMatrix::new(px).unwrap();
        let model = init_model(&[4, 3, 2], seed, tied, activation).unwrap();
        let a = model.forward(&x, &g).unwrap();
        let b = model.forward(&px, &pg).unwrap();
        for i in 0..n {
            for (u, v) in a.embeddings().column(i).iter().zip(b.embeddings().column(perm[i])) {
                prop_assert!((u - v).abs() < 1e-10);
            }
            for (u, v) in a.reconstruction().column(i).iter().zip(b.reconstruction().column(perm[i])) {
                prop_assert!((u - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn embeddings_only_see_two_hops(g in graph_strategy(12), seed in any::<u64>(), node in any::<prop::sample::Index>()) {
        let n = g.num_nodes();
        let target = node.index(n);
        let dist = hop_distances(&g, target);
        let x = features_for(n, 3, seed);
        let mut y = x.values().clone();
        for j in 0..n {
            if dist[j] > 2 {
                y.column_mut(j).mapv_inplace(|v| v * -3.0 + 1.0);
            }
        }
        let y = FeatureMatrix::new(y).unwrap();
        let model = init_model(&[3, 4, 2], seed, true, Activation::Tanh).unwrap();
        let a = model.embed(&x, &g).unwrap();
        let b = model.embed(&y, &g).unwrap();
        for (u, v) in a.column(target).iter().zip(b.column(target)) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_inputs_stay_constant(g in graph_strategy(10), seed in any::<u64>(), activation in activation_strategy()) {
        let n = g.num_nodes();
        let column = features_for(1, 3, seed).into_values();
        let x = FeatureMatrix::new(Array2::from_shape_fn((3, n), |(r, _)| column[[r, 0]])).unwrap();
        let model = init_model(&[3, 4, 2], seed, false, activation).unwrap();
        let trace = model.forward(&x, &g).unwrap();
        for rep in trace.encoder_reps.iter().chain(&trace.decoder_reps) {
            for i in 1..n {
                for (u, v) in rep.column(i).iter().zip(rep.column(0)) {
                    prop_assert!((u - v).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn losses_are_nonnegative(g in graph_strategy(10), seed in any::<u64>(), scale in 0.0f64..20.0) {
        let n = g.num_nodes();
        let x = features_for(n, 3, seed);
        let h = features_for(n, 3, seed.wrapping_add(1)).into_values() * scale;
        prop_assert!(structure_loss(&h, &g).unwrap() >= 0.0);
        prop_assert!(feature_loss(&x, &h).unwrap() >= 0.0);
        prop_assert!(feature_loss(&x, x.values()).unwrap() <= n as f64 * 1e-6 * (1.0 + 1e-9));
    }

    #[test]
    fn checkpoints_round_trip(f in 1usize..6, d1 in 1usize..6, d2 in 1usize..6, seed in any::<u64>(), tied in any::<bool>(), activation in activation_strategy()) {
        let model = init_model(&[f, d1, d2], seed, tied, activation).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        prop_assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), model);
    }

    #[test]
    fn run_statistics_recompute(acc in proptest::collection::vec(0.0f64..1.0, 1..20)) {
        let s = RunStatistics::new(acc.clone());
        let mean = acc.iter().sum::<f64>() / acc.len() as f64;
        prop_assert!((s.mean - mean).abs() < 1e-12);
        if acc.len() > 1 {
            let var = acc.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (acc.len() - 1) as f64;
            prop_assert!((s.std - var.sqrt()).abs() < 1e-12);
        } else {
            prop_assert_eq!(s.std, 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn datasets_round_trip_through_disk(g in graph_strategy(12), seed in any::<u64>()) {
        let n = g.num_nodes();
        prop_assume!(n >= 2);
        let x = features_for(n, 3, seed);
        let labels = LabelVector::new((0..n).map(|i| i % 2).collect(), 2).unwrap();
        let split = SplitSpec::new(vec![0, 1], vec![], (2..n).collect(), n).unwrap();
        let data = Dataset { name: Some("toy".into()), graph: g, features: x, labels, split };
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&data, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(&back.graph, &data.graph);
        prop_assert_eq!(&back.features, &data.features);
        prop_assert_eq!(&back.labels, &data.labels);
        prop_assert_eq!(&back.split, &data.split);
    }

    #[test]
    fn probe_ignores_dimension_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = 60;
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let h = Array2::from_shape_fn((4, n), |(d, i)| {
            let centre = if d == labels[i] { 2.0 } else { 0.0 };
            centre + rand::Rng::gen_range(&mut r, -1.0..1.0)
        });
        let reversed = Array2::from_shape_fn((4, n), |(d, i)| h[[3 - d, i]]);
        let train: Vec<usize> = (0..30).collect();
        let test: Vec<usize> = (30..n).collect();
        let cfg = ProbeConfig::default();
        let a = fit_probe(h.view(), &labels, 3, &train, &cfg).unwrap().accuracy(h.view(), &labels, &test).unwrap();
        let b = fit_probe(reversed.view(), &labels, 3, &train, &cfg).unwrap().accuracy(reversed.view(), &labels, &test).unwrap();
        prop_assert_eq!(a, b);
    }
}
