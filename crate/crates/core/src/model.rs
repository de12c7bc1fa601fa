//! Stacked attention encoder/decoder layers.
//!
//! Representations are `d × N` matrices with one column per node. Encoder
//! layer `k` maps `H^(k-1)` to `H^(k) = agg(C^(k), σ(W^(k) H^(k-1)))`, where
//! `agg` sums each node's neighbors weighted by its attention row. Decoder
//! layer `k` mirrors it from `Ĥ^(k)` down to `Ĥ^(k-1)`. With tied weights the
//! decoder reads `Ŵ^(k) = W^(k)ᵀ` and reuses the encoder's attention.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use crate::autodiff::Activation;
use crate::autodiff::{AutodiffError, SparseColumns, Tape, Var};
use crate::graph::{FeatureMatrix, GraphError, SparseGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model needs an input dimension and at least one layer, got {0:?}")]
    TooFewDims(Vec<usize>),
    #[error("dimension {index} is zero in {dims:?}")]
    ZeroDim { index: usize, dims: Vec<usize> },
    #[error("input has {found} features, model expects {expected}")]
    InputDim { expected: usize, found: usize },
    #[error("tied decoding needs the encoder attention of every layer")]
    MissingEncoderAttention,
    #[error("layer index {0} out of range")]
    LayerOutOfRange(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Activation::Identity),
            "sigmoid" => Some(Activation::Sigmoid),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Untied decoder parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    /// `d^(k-1) × d^(k)`
    pub weight: Array2<f64>,
    /// `1 × d^(k-1)`
    pub v_s: Array2<f64>,
    /// `1 × d^(k-1)`
    pub v_r: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `d^(k) × d^(k-1)`
    pub weight: Array2<f64>,
    /// `1 × d^(k)`; scores the attending node.
    pub v_s: Array2<f64>,
    /// `1 × d^(k)`; scores the attended neighbor.
    pub v_r: Array2<f64>,
    /// `None` when the decoder is tied to the encoder.
    pub decoder: Option<DecoderParams>,
}

impl LayerParams {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = vec![&self.weight, &self.v_s, &self.v_r];
        if let Some(d) = &self.decoder {
            out.extend([&d.weight, &d.v_s, &d.v_r]);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.weight, &mut self.v_s, &mut self.v_r];
        if let Some(d) = &mut self.decoder {
            out.extend([&mut d.weight, &mut d.v_s, &mut d.v_r]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateModel {
    dims: Vec<usize>,
    activation: Activation,
    tied: bool,
    ablate_attention: bool,
    seed: u64,
    layers: Vec<LayerParams>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(ModelError::TooFewDims(dims.to_vec()));
    }
    if let Some(index) = dims.iter().position(|&d| d == 0) {
        return Err(ModelError::ZeroDim {
            index,
            dims: dims.to_vec(),
        });
    }
    Ok(())
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.gen_range(-bound..bound))
}

/// Glorot-uniform initialization. `dims[0]` is the feature count and
/// `dims[1..]` the layer widths.
pub fn init_model(
    dims: &[usize],
    seed: u64,
    tied: bool,
    activation: Activation,
) -> Result<GateModel> {
    check_dims(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = dims
        .windows(2)
        .map(|w| {
            let (d_in, d_out) = (w[0], w[1]);
            let w_bound = (6.0 / (d_in + d_out) as f64).sqrt();
            let v_bound = (6.0 / (d_out + 1) as f64).sqrt();
            let weight = uniform(&mut rng, (d_out, d_in), w_bound);
            let v_s = uniform(&mut rng, (1, d_out), v_bound);
            let v_r = uniform(&mut rng, (1, d_out), v_bound);
            let decoder = (!tied).then(|| {
                let dv_bound = (6.0 / (d_in + 1) as f64).sqrt();
                DecoderParams {
                    weight: uniform(&mut rng, (d_in, d_out), w_bound),
                    v_s: uniform(&mut rng, (1, d_in), dv_bound),
                    v_r: uniform(&mut rng, (1, d_in), dv_bound),
                }
            });
            LayerParams {
                weight,
                v_s,
                v_r,
                decoder,
            }
        })
        .collect();
    Ok(GateModel {
        dims: dims.to_vec(),
        activation,
        tied,
        ablate_attention: false,
        seed,
        layers,
    })
}

/// Recorded forward pass: tape handles for every parameter and intermediate.
#[derive(Debug, Clone)]
pub struct RecordedForward {
    /// Parameter leaves in [`GateModel::parameters`] order.
    pub params: Vec<Var>,
    /// `H^(0..=L)`; `H^(0)` is the input.
    pub encoder_reps: Vec<Var>,
    /// `Ĥ^(k)` at index `k`; `Ĥ^(L)` is the embedding.
    pub decoder_reps: Vec<Var>,
    /// `C^(k)` at index `k - 1`.
    pub encoder_attention: Vec<Var>,
    /// `Ĉ^(k)` at index `k - 1`; the same handles as the encoder's when tied.
    pub decoder_attention: Vec<Var>,
}

impl RecordedForward {
    pub fn embeddings(&self) -> Var {
        *self.encoder_reps.last().expect("at least one layer")
    }

    pub fn reconstruction(&self) -> Var {
        self.decoder_reps[0]
    }

    pub fn input(&self) -> Var {
        self.encoder_reps[0]
    }
}

/// Materialized forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `H^(0..=L)`.
    pub encoder_reps: Vec<Array2<f64>>,
    /// `Ĥ^(k)` at index `k`, for `k = 0..=L`.
    pub decoder_reps: Vec<Array2<f64>>,
    /// Edge-aligned `C^(k)` at index `k - 1`.
    pub encoder_attention: Vec<Array1<f64>>,
    /// Edge-aligned `Ĉ^(k)` at index `k - 1`.
    pub decoder_attention: Vec<Array1<f64>>,
}

impl ForwardTrace {
    pub fn embeddings(&self) -> &Array2<f64> {
        self.encoder_reps.last().expect("at least one layer")
    }

    pub fn reconstruction(&self) -> &Array2<f64> {
        &self.decoder_reps[0]
    }

    fn from_tape(tape: &Tape<'_>, rec: &RecordedForward) -> Self {
        let dense = |vars: &[Var]| vars.iter().map(|&v| tape.dense(v).clone()).collect();
        let edge = |vars: &[Var]| vars.iter().map(|&v| tape.edge(v).clone()).collect();
        Self {
            encoder_reps: dense(&rec.encoder_reps),
            decoder_reps: dense(&rec.decoder_reps),
            encoder_attention: edge(&rec.encoder_attention),
            decoder_attention: edge(&rec.decoder_attention),
        }
    }
}

/// Node features prepared for the first layer: kept dense, plus a column
/// sparse copy when most entries are zero.
#[derive(Debug, Clone)]
pub struct PreparedFeatures {
    dense: Array2<f64>,
    sparse: Option<SparseColumns>,
}

impl PreparedFeatures {
    /// Density below which the first layer multiplies sparsely.
    pub const SPARSE_BELOW: f64 = 0.3;

    pub fn new(features: &FeatureMatrix) -> Self {
        let sparse = (features.density() < Self::SPARSE_BELOW)
            .then(|| SparseColumns::from_dense(features.values().view()));
        Self {
            dense: features.values().clone(),
            sparse,
        }
    }

    pub fn dense_only(features: &FeatureMatrix) -> Self {
        Self {
            dense: features.values().clone(),
            sparse: None,
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.dense
    }

    pub fn num_features(&self) -> usize {
        self.dense.nrows()
    }

    pub fn num_nodes(&self) -> usize {
        self.dense.ncols()
    }
}

/// Uniform attention `1 / |N_i|` over each neighborhood.
pub fn uniform_attention(graph: &SparseGraph) -> Array1<f64> {
    graph
        .row_indices()
        .iter()
        .map(|&i| 1.0 / graph.row_range(i).len() as f64)
        .collect()
}

impl GateModel {
    /// Feature count followed by every layer width.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn embedding_dim(&self) -> usize {
        *self.dims.last().expect("validated dims")
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn is_tied(&self) -> bool {
        self.tied
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn attention_ablated(&self) -> bool {
        self.ablate_attention
    }

    /// Replaces learned attention with uniform neighborhood weights.
    pub fn with_attention_ablated(mut self, ablate: bool) -> Self {
        self.ablate_attention = ablate;
        self
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    /// Rebuilds a model from explicit parameters, checking every shape.
    pub fn from_parts(
        dims: Vec<usize>,
        activation: Activation,
        tied: bool,
        ablate_attention: bool,
        seed: u64,
        layers: Vec<LayerParams>,
    ) -> Result<Self> {
        check_dims(&dims)?;
        let template = init_model(&dims, 0, tied, activation)?;
        if layers.len() != template.layers.len() {
            return Err(ModelError::LayerOutOfRange(layers.len()));
        }
        for (k, (got, want)) in layers.iter().zip(&template.layers).enumerate() {
            let (g, w) = (got.tensors(), want.tensors());
            if g.len() != w.len() || g.iter().zip(&w).any(|(a, b)| a.dim() != b.dim()) {
                return Err(ModelError::Autodiff(AutodiffError::Shape {
                    op: "from_parts",
                    detail: format!("layer {} parameters do not match dims {dims:?}", k + 1),
                }));
            }
            if g.iter().any(|a| a.iter().any(|v| !v.is_finite())) {
                return Err(ModelError::Autodiff(AutodiffError::NonFinite {
                    op: "from_parts",
                }));
            }
        }
        Ok(Self {
            dims,
            activation,
            tied,
            ablate_attention,
            seed,
            layers,
        })
    }

    /// Every trainable tensor, layer by layer: `W, v_s, v_r` then the untied
    /// decoder's `Ŵ, v̂_s, v̂_r`.
    pub fn parameters(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().flat_map(LayerParams::tensors).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers
            .iter_mut()
            .flat_map(LayerParams::tensors_mut)
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, features: usize) -> Result<()> {
        if features != self.dims[0] {
            return Err(ModelError::InputDim {
                expected: self.dims[0],
                found: features,
            });
        }
        Ok(())
    }

    /// Puts every parameter on the tape, trainable or constant.
    pub fn register<'g>(&self, tape: &mut Tape<'g>, trainable: bool) -> Result<Vec<Var>> {
        self.parameters()
            .into_iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .map(|r| r.map_err(ModelError::from))
            .collect()
    }

    fn stride(&self) -> usize {
        if self.tied {
            3
        } else {
            6
        }
    }

    /// Attention of one layer from its projected representations
    /// `M = σ(W H)`: per-edge `sigmoid(v_s·m_i + v_r·m_j)`, normalized over
    /// each neighborhood.
    fn attention<'g>(
        &self,
        tape: &mut Tape<'g>,
        projected: Var,
        v_s: Var,
        v_r: Var,
        graph: &'g SparseGraph,
    ) -> Result<Var> {
        if self.ablate_attention {
            return Ok(tape.edge_constant(uniform_attention(graph))?);
        }
        let s = tape.matmul(v_s, projected)?;
        let r = tape.matmul(v_r, projected)?;
        let scores = tape.edge_scores(s, r, graph)?;
        Ok(tape.segment_softmax(scores, graph)?)
    }

    /// Runs the encoder. Returns `H^(0..=L)` and `C^(1..=L)`.
    pub fn encode<'g>(
        &self,
        tape: &mut Tape<'g>,
        params: &[Var],
        input: Var,
        sparse_input: Option<&'g SparseColumns>,
        graph: &'g SparseGraph,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        let features = tape.dense(input).dim();
        self.check_input(features.0)?;
        graph_matches(graph, features.1)?;
        let mut reps = vec![input];
        let mut attention = Vec::with_capacity(self.layers.len());
        for k in 0..self.layers.len() {
            let p = &params[k * self.stride()..];
            let (w, v_s, v_r) = (p[0], p[1], p[2]);
            let prev = reps[k];
            let linear = match (k, sparse_input) {
                (0, Some(x)) => tape.matmul_sparse(w, x)?,
                _ => tape.matmul(w, prev)?,
            };
            let projected = tape.activate(linear, self.activation)?;
            let alpha = self.attention(tape, projected, v_s, v_r, graph)?;
            reps.push(tape.attention_aggregate(alpha, projected, graph)?);
            attention.push(alpha);
        }
        Ok((reps, attention))
    }

    /// Runs the decoder from `Ĥ^(L) = embeddings`. Returns `Ĥ^(k)` indexed by
    /// `k` and `Ĉ^(1..=L)`. Tied models need `encoder_attention`.
    pub fn decode<'g>(
        &self,
        tape: &mut Tape<'g>,
        params: &[Var],
        embeddings: Var,
        graph: &'g SparseGraph,
        encoder_attention: Option<&[Var]>,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        let layers = self.layers.len();
        let tied_attention = match (self.tied, encoder_attention) {
            (true, Some(c)) if c.len() == layers => Some(c),
            (true, _) => return Err(ModelError::MissingEncoderAttention),
            (false, _) => None,
        };
        let dim = tape.dense(embeddings).dim();
        if dim.0 != self.embedding_dim() {
            return Err(ModelError::InputDim {
                expected: self.embedding_dim(),
                found: dim.0,
            });
        }
        graph_matches(graph, dim.1)?;
        let mut reps: Vec<Option<Var>> = vec![None; layers + 1];
        let mut attention: Vec<Option<Var>> = vec![None; layers];
        reps[layers] = Some(embeddings);
        for k in (1..=layers).rev() {
            let p = &params[(k - 1) * self.stride()..];
            let current = reps[k].expect("filled by the previous layer");
            let (linear, alpha) = match tied_attention {
                Some(c) => {
                    let w_t = tape.transpose(p[0])?;
                    (tape.matmul(w_t, current)?, Some(c[k - 1]))
                }
                None => (tape.matmul(p[3], current)?, None),
            };
            let projected = tape.activate(linear, self.activation)?;
            let alpha = match alpha {
                Some(a) => a,
                None => self.attention(tape, projected, p[4], p[5], graph)?,
            };
            reps[k - 1] = Some(tape.attention_aggregate(alpha, projected, graph)?);
            attention[k - 1] = Some(alpha);
        }
        Ok((
            reps.into_iter().map(Option::unwrap).collect(),
            attention.into_iter().map(Option::unwrap).collect(),
        ))
    }

    /// Records the whole encoder/decoder pass on `tape`.
    pub fn record_forward<'g>(
        &self,
        tape: &mut Tape<'g>,
        features: &'g PreparedFeatures,
        graph: &'g SparseGraph,
        trainable: bool,
    ) -> Result<RecordedForward> {
        let params = self.register(tape, trainable)?;
        let input = tape.constant(features.dense.clone())?;
        let (encoder_reps, encoder_attention) =
            self.encode(tape, &params, input, features.sparse.as_ref(), graph)?;
        let embeddings = *encoder_reps.last().expect("at least one layer");
        let (decoder_reps, decoder_attention) =
            self.decode(tape, &params, embeddings, graph, Some(&encoder_attention))?;
        Ok(RecordedForward {
            params,
            encoder_reps,
            decoder_reps,
            encoder_attention,
            decoder_attention,
        })
    }

    /// Full forward pass without gradients.
    pub fn forward(&self, features: &FeatureMatrix, graph: &SparseGraph) -> Result<ForwardTrace> {
        let prepared = PreparedFeatures::new(features);
        let mut tape = Tape::new();
        let rec = self.record_forward(&mut tape, &prepared, graph, false)?;
        Ok(ForwardTrace::from_tape(&tape, &rec))
    }

    /// Encoder only: the `d^(L) × N` embedding matrix.
    pub fn embed(&self, features: &FeatureMatrix, graph: &SparseGraph) -> Result<Array2<f64>> {
        let prepared = PreparedFeatures::new(features);
        let mut tape = Tape::new();
        let params = self.register(&mut tape, false)?;
        let input = tape.constant(prepared.dense.clone())?;
        let (reps, _) = self.encode(&mut tape, &params, input, prepared.sparse.as_ref(), graph)?;
        Ok(tape
            .dense(*reps.last().expect("at least one layer"))
            .clone())
    }

    /// Edge-aligned attention of encoder layer `k` (1-based) given its input
    /// `H^(k-1)`.
    pub fn encoder_attention(
        &self,
        k: usize,
        h_prev: &Array2<f64>,
        graph: &SparseGraph,
    ) -> Result<Array1<f64>> {
        if k == 0 || k > self.layers.len() {
            return Err(ModelError::LayerOutOfRange(k));
        }
        if h_prev.nrows() != self.dims[k - 1] {
            return Err(ModelError::InputDim {
                expected: self.dims[k - 1],
                found: h_prev.nrows(),
            });
        }
        graph_matches(graph, h_prev.ncols())?;
        let layer = &self.layers[k - 1];
        let mut tape = Tape::new();
        let w = tape.constant(layer.weight.clone())?;
        let v_s = tape.constant(layer.v_s.clone())?;
        let v_r = tape.constant(layer.v_r.clone())?;
        let h = tape.constant(h_prev.clone())?;
        let linear = tape.matmul(w, h)?;
        let projected = tape.activate(linear, self.activation)?;
        let alpha = self.attention(&mut tape, projected, v_s, v_r, graph)?;
        Ok(tape.edge(alpha).clone())
    }
}

fn graph_matches(graph: &SparseGraph, columns: usize) -> Result<()> {
    if graph.num_nodes() != columns {
        return Err(GraphError::FeatureShape {
            expected: graph.num_nodes(),
            found: columns,
        }
        .into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_is_deterministic() {
        let a = init_model(&[5, 4, 3], 7, true, Activation::Identity).unwrap();
        let b = init_model(&[5, 4, 3], 7, true, Activation::Identity).unwrap();
        assert_eq!(a, b);
        let c = init_model(&[5, 4, 3], 8, true, Activation::Identity).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_respects_glorot_bounds() {
        let m = init_model(&[30, 20, 10], 3, false, Activation::Identity).unwrap();
        let l = &m.layers()[0];
        let wb = (6.0f64 / 50.0).sqrt();
        assert!(l.weight.iter().all(|v| v.abs() <= wb));
        assert!(l.v_s.iter().all(|v| v.abs() <= (6.0f64 / 21.0).sqrt()));
        let d = l.decoder.as_ref().unwrap();
        assert_eq!(d.weight.dim(), (30, 20));
        assert!(d.v_r.iter().all(|v| v.abs() <= (6.0f64 / 31.0).sqrt()));
    }

    #[test]
    fn invalid_dims_rejected() {
        assert_eq!(
            init_model(&[], 0, true, Activation::Identity),
            Err(ModelError::TooFewDims(vec![]))
        );
        assert_eq!(
            init_model(&[4], 0, true, Activation::Identity),
            Err(ModelError::TooFewDims(vec![4]))
        );
        assert!(matches!(
            init_model(&[4, 0, 2], 0, true, Activation::Identity),
            Err(ModelError::ZeroDim { index: 1, .. })
        ));
    }

    #[test]
    fn parameter_counts() {
        let dims = [1433, 512, 512];
        let tied = init_model(&dims, 1, true, Activation::Identity).unwrap();
        let expected: usize = dims.windows(2).map(|w| w[1] * w[0] + 2 * w[1]).sum();
        assert_eq!(tied.parameter_count(), expected);
        let untied = init_model(&dims, 1, false, Activation::Identity).unwrap();
        let decoder: usize = dims.windows(2).map(|w| w[0] * w[1] + 2 * w[0]).sum();
        assert_eq!(untied.parameter_count(), expected + decoder);

        let square = [6, 6, 6];
        let t = init_model(&square, 0, true, Activation::Identity).unwrap();
        let u = init_model(&square, 0, false, Activation::Identity).unwrap();
        assert_eq!(2 * t.parameter_count(), u.parameter_count());
    }

    fn set_identity(model: &mut GateModel) {
        for layer in model.layers_mut() {
            let (r, c) = layer.weight.dim();
            layer.weight = Array2::eye(r.max(c))
                .slice(ndarray::s![..r, ..c])
                .to_owned();
        }
    }

    #[test]
    fn single_node_identity_encoder() {
        let g = SparseGraph::from_edges(1, &[]).unwrap();
        let x = FeatureMatrix::new(array![[0.3], [-2.0]]).unwrap();
        let mut m = init_model(&[2, 2], 5, true, Activation::Identity).unwrap();
        set_identity(&mut m);
        assert_eq!(m.embed(&x, &g).unwrap(), x.values().clone());
        let alpha = m.encoder_attention(1, x.values(), &g).unwrap();
        assert_eq!(alpha, array![1.0]);
    }

    #[test]
    fn uniform_attention_averages_pair() {
        let g = SparseGraph::from_edges(2, &[(0, 1)]).unwrap();
        let x = FeatureMatrix::new(array![[1.0, 3.0], [2.0, -2.0]]).unwrap();
        let mut m = init_model(&[2, 2], 5, true, Activation::Identity)
            .unwrap()
            .with_attention_ablated(true);
        set_identity(&mut m);
        let h = m.embed(&x, &g).unwrap();
        assert_eq!(h, array![[2.0, 2.0], [0.0, 0.0]]);
    }

    #[test]
    fn ablated_attention_is_one_over_degree() {
        let g = SparseGraph::from_edges(4, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let m = init_model(&[3, 2], 5, true, Activation::Identity)
            .unwrap()
            .with_attention_ablated(true);
        let alpha = m.encoder_attention(1, &Array2::ones((3, 4)), &g).unwrap();
        for (e, &i) in g.row_indices().iter().enumerate() {
            assert_eq!(alpha[e], 1.0 / g.degree(i).unwrap() as f64);
        }
        assert_eq!(alpha[g.row_range(0).start], 1.0 / 3.0);
    }

    #[test]
    fn orthogonal_tied_round_trip() {
        // self-loops only, so attention is the identity
        let g = SparseGraph::from_edges(3, &[]).unwrap();
        let x = FeatureMatrix::new(array![[1.0, -1.0, 0.5], [2.0, 0.0, 3.0]]).unwrap();
        let mut m = init_model(&[2, 2], 1, true, Activation::Identity).unwrap();
        let (c, s) = (0.6, 0.8);
        m.layers_mut()[0].weight = array![[c, -s], [s, c]];
        let trace = m.forward(&x, &g).unwrap();
        for (a, b) in trace.reconstruction().iter().zip(x.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_decoder_weight_reconstructs_zero() {
        let g = SparseGraph::from_edges(3, &[(0, 1)]).unwrap();
        let x = FeatureMatrix::new(array![[1.0, -1.0, 0.5], [2.0, 0.0, 3.0]]).unwrap();
        let mut m = init_model(&[2, 3], 1, false, Activation::Identity).unwrap();
        m.layers_mut()[0].decoder.as_mut().unwrap().weight.fill(0.0);
        let trace = m.forward(&x, &g).unwrap();
        assert!(trace.reconstruction().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tied_decode_without_attention_fails() {
        let g = SparseGraph::from_edges(2, &[(0, 1)]).unwrap();
        let m = init_model(&[2, 2], 1, true, Activation::Identity).unwrap();
        let mut tape = Tape::new();
        let params = m.register(&mut tape, false).unwrap();
        let h = tape.constant(Array2::ones((2, 2))).unwrap();
        assert_eq!(
            m.decode(&mut tape, &params, h, &g, None).unwrap_err(),
            ModelError::MissingEncoderAttention
        );
    }

    #[test]
    fn trace_boundaries_and_tying() {
        let g = SparseGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let x = FeatureMatrix::new(Array2::from_shape_fn((3, 4), |(i, j)| {
            (i * 4 + j) as f64 * 0.1
        }))
        .unwrap();
        let m = init_model(&[3, 4, 2], 11, true, Activation::Tanh).unwrap();
        let trace = m.forward(&x, &g).unwrap();
        assert_eq!(&trace.encoder_reps[0], x.values());
        assert_eq!(trace.decoder_reps[2], trace.encoder_reps[2]);
        assert_eq!(trace.decoder_attention, trace.encoder_attention);
        assert_eq!(trace.reconstruction().dim(), (3, 4));
    }

    #[test]
    fn input_dimension_checked() {
        let g = SparseGraph::from_edges(2, &[]).unwrap();
        let x = FeatureMatrix::new(Array2::ones((3, 2))).unwrap();
        let m = init_model(&[2, 2], 1, true, Activation::Identity).unwrap();
        assert_eq!(
            m.forward(&x, &g).unwrap_err(),
            ModelError::InputDim {
                expected: 2,
                found: 3
            }
        );
        let wrong_graph = SparseGraph::from_edges(3, &[]).unwrap();
        let x2 = FeatureMatrix::new(Array2::ones((2, 2))).unwrap();
        assert!(matches!(
            m.forward(&x2, &wrong_graph),
            Err(ModelError::Graph(_))
        ));
    }
}
