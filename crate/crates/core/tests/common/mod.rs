#![allow(dead_code)]

use gate::graph::{FeatureMatrix, SparseGraph};
use gate::model::{init_model, Activation, GateModel, PreparedFeatures};
use gate::train::{loss_and_gradients, Ablation, TrainConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> SparseGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    SparseGraph::from_edges(n, &edges).unwrap()
}

pub fn random_features(rng: &mut ChaCha8Rng, f: usize, n: usize) -> FeatureMatrix {
    FeatureMatrix::new(Array2::from_shape_simple_fn((f, n), || {
        rng.gen_range(-1.0..1.0)
    }))
    .unwrap()
}

pub fn dense_adjacency(g: &SparseGraph) -> Array2<f64> {
    let n = g.num_nodes();
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for &j in g.neighbors(i) {
            a[[i, j]] = 1.0;
        }
    }
    a
}

pub fn edge_to_dense(g: &SparseGraph, values: &ndarray::Array1<f64>) -> Array2<f64> {
    let n = g.num_nodes();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for e in g.row_range(i) {
            out[[i, g.col_indices()[e]]] = values[e];
        }
    }
    out
}

fn act(a: Activation, x: &Array2<f64>) -> Array2<f64> {
    match a {
        Activation::Identity => x.clone(),
        Activation::Sigmoid => x.mapv(|v| 1.0 / (1.0 + (-v).exp())),
        Activation::Tanh => x.mapv(f64::tanh),
    }
}

/// Dense masked attention: row `i` is a softmax over the columns where
/// `mask[i, j] = 1`.
pub fn dense_attention(
    m: &Array2<f64>,
    v_s: &Array2<f64>,
    v_r: &Array2<f64>,
    mask: &Array2<f64>,
    uniform: bool,
) -> Array2<f64> {
    let n = mask.nrows();
    let s = v_s.dot(m);
    let r = v_r.dot(m);
    let mut c = Array2::zeros((n, n));
    for i in 0..n {
        let mut total = 0.0;
        for j in 0..n {
            if mask[[i, j]] != 0.0 {
                let e = if uniform {
                    0.0
                } else {
                    1.0 / (1.0 + (-(s[[0, i]] + r[[0, j]])).exp())
                };
                c[[i, j]] = e.exp();
                total += c[[i, j]];
            }
        }
        for j in 0..n {
            c[[i, j]] /= total;
        }
    }
    c
}

pub struct DenseTrace {
    pub encoder_reps: Vec<Array2<f64>>,
    pub decoder_reps: Vec<Array2<f64>>,
    pub encoder_attention: Vec<Array2<f64>>,
    pub decoder_attention: Vec<Array2<f64>>,
}

/// Brute-force forward pass with `N × N` attention matrices. Column `i` of
/// each layer output is `Σ_j C[i, j] m_j`, i.e. `M Cᵀ`.
pub fn dense_forward(model: &GateModel, x: &Array2<f64>, g: &SparseGraph) -> DenseTrace {
    let mask = dense_adjacency(g);
    let a = model.activation();
    let uniform = model.attention_ablated();
    let layers = model.layers();
    let mut enc = vec![x.clone()];
    let mut enc_att = Vec::new();
    for l in layers {
        let m = act(a, &l.weight.dot(enc.last().unwrap()));
        let c = dense_attention(&m, &l.v_s, &l.v_r, &mask, uniform);
        enc.push(m.dot(&c.t()));
        enc_att.push(c);
    }
    let depth = layers.len();
    let mut dec = vec![Array2::zeros((0, 0)); depth + 1];
    let mut dec_att = vec![Array2::zeros((0, 0)); depth];
    dec[depth] = enc[depth].clone();
    for k in (1..=depth).rev() {
        let l = &layers[k - 1];
        let (m, c) = match &l.decoder {
            None => (act(a, &l.weight.t().dot(&dec[k])), enc_att[k - 1].clone()),
            Some(d) => {
                let m = act(a, &d.weight.dot(&dec[k]));
                let c = dense_attention(&m, &d.v_s, &d.v_r, &mask, uniform);
                (m, c)
            }
        };
        dec[k - 1] = m.dot(&c.t());
        dec_att[k - 1] = c;
    }
    DenseTrace {
        encoder_reps: enc,
        decoder_reps: dec,
        encoder_attention: enc_att,
        decoder_attention: dec_att,
    }
}

pub fn feature_loss_oracle(x: &Array2<f64>, x_hat: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..x.ncols() {
        let mut sq = 0.0;
        for f in 0..x.nrows() {
            let d = x[[f, i]] - x_hat[[f, i]];
            sq += d * d;
        }
        total += (sq + 1e-12).sqrt();
    }
    total
}

pub fn structure_loss_oracle(h: &Array2<f64>, g: &SparseGraph) -> f64 {
    let mut total = 0.0;
    for i in 0..g.num_nodes() {
        for &j in g.neighbors(i) {
            let z: f64 = (0..h.nrows()).map(|r| h[[r, i]] * h[[r, j]]).sum();
            total += -(1.0 / (1.0 + (-z).exp())).ln();
        }
    }
    total
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub struct GradInstance {
    pub graph: SparseGraph,
    pub features: FeatureMatrix,
    pub model: GateModel,
    pub cfg: TrainConfig,
}

pub fn gradient_instance(seed: u64) -> GradInstance {
    let mut r = rng(seed);
    let n = r.gen_range(2..=8);
    let f = r.gen_range(1..=6);
    let d1 = r.gen_range(1..=5);
    let d2 = r.gen_range(1..=5);
    let tied = seed.is_multiple_of(2);
    let activation =
        [Activation::Identity, Activation::Tanh, Activation::Sigmoid][(seed / 2 % 3) as usize];
    let graph = random_graph(&mut r, n, 0.4);
    let features = random_features(&mut r, f, n);
    let ablation = if seed % 7 == 3 {
        Ablation::NoAttention
    } else {
        Ablation::None
    };
    let model = init_model(&[f, d1, d2], seed, tied, activation)
        .unwrap()
        .with_attention_ablated(ablation == Ablation::NoAttention);
    let cfg = TrainConfig {
        lambda: r.gen_range(0.1..2.0),
        dims: vec![d1, d2],
        tied,
        activation,
        ablation,
        seed,
        ..TrainConfig::default()
    };
    GradInstance {
        graph,
        features,
        model,
        cfg,
    }
}

/// Largest relative error between analytic and central-difference
/// gradients over every parameter entry.
pub fn max_gradient_error(inst: &GradInstance, h: f64) -> f64 {
    let prepared = PreparedFeatures::new(&inst.features);
    let analytic = loss_and_gradients(&inst.model, &prepared, &inst.graph, &inst.cfg)
        .unwrap()
        .gradients;
    let loss_at = |m: &GateModel| {
        loss_and_gradients(m, &prepared, &inst.graph, &inst.cfg)
            .unwrap()
            .total_loss
    };
    let mut model = inst.model.clone();
    let mut worst: f64 = 0.0;
    for (p, grad) in analytic.iter().enumerate() {
        for idx in 0..grad.len() {
            let orig = model.parameters()[p].as_slice().unwrap()[idx];
            model.parameters_mut()[p].as_slice_mut().unwrap()[idx] = orig + h;
            let plus = loss_at(&model);
            model.parameters_mut()[p].as_slice_mut().unwrap()[idx] = orig - h;
            let minus = loss_at(&model);
            model.parameters_mut()[p].as_slice_mut().unwrap()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.as_slice().unwrap()[idx];
            let scale = a.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}

/// Below this magnitude, roundoff in the difference quotient dominates and
/// errors are measured against the floor instead.
pub const GRADIENT_FLOOR: f64 = 1e-5;
