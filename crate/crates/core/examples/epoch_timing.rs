//! Per-epoch wall time on a synthetic graph of citation-benchmark size.
//!
//! `cargo run --release -p gate-core --example epoch_timing -- [nodes] [features] [edges] [epochs]`

use std::time::Instant;

use gate::synthetic::{planted_partition, SyntheticSpec};
use gate::train::{initial_model, TrainConfig, Trainer};

fn main() {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("numeric argument"))
        .collect();
    let arg = |i: usize, default: usize| args.get(i).copied().unwrap_or(default);
    let spec = SyntheticSpec {
        num_nodes: arg(0, 2708),
        num_classes: 7,
        num_features: arg(1, 1433),
        num_edges: arg(2, 5278),
        words_per_node: 18,
        train_per_class: 20,
        num_val: 500,
        num_test: 1000,
        ..SyntheticSpec::default()
    };
    let epochs = arg(3, 5);
    let data = planted_partition(&spec).expect("valid spec");
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let model = initial_model(data.features.num_features(), &cfg).expect("valid dims");
    let mut trainer = Trainer::new(model, &data.features, &data.graph, cfg).expect("valid config");
    for _ in 0..epochs {
        let start = Instant::now();
        let loss = trainer.step().expect("finite training");
        println!(
            "epoch {} total {:.4} in {:.3}s",
            loss.epoch,
            loss.total_loss,
            start.elapsed().as_secs_f64()
        );
    }
}
