//! TSV exports of embeddings and averaged attention.

use std::io::Write;

use ndarray::{Array1, Array2};

use crate::graph::SparseGraph;
use crate::model::ForwardTrace;

/// One row per node in id order: `node_id`, then `dim_0 … dim_{d-1}`.
/// `embeddings` is `d × N`.
pub fn write_embeddings<W: Write>(embeddings: &Array2<f64>, mut out: W) -> std::io::Result<()> {
    write!(out, "node_id")?;
    for k in 0..embeddings.nrows() {
        write!(out, "\tdim_{k}")?;
    }
    writeln!(out)?;
    for (i, column) in embeddings.columns().into_iter().enumerate() {
        write!(out, "{i}")?;
        for v in column {
            write!(out, "\t{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()
}

/// Edge-aligned `Σ_k (C^(k) + Ĉ^(k)) / 2L`.
pub fn mean_attention(trace: &ForwardTrace) -> Array1<f64> {
    let layers = trace.encoder_attention.len();
    let mut total = Array1::zeros(trace.encoder_attention[0].len());
    for (enc, dec) in trace.encoder_attention.iter().zip(&trace.decoder_attention) {
        total += enc;
        total += dec;
    }
    total / (2 * layers) as f64
}

/// One row per stored pair `(src, dst)`, self-loops included: the
/// layer-averaged attention, then each layer's `(α + α̂) / 2`.
pub fn write_attention<W: Write>(
    trace: &ForwardTrace,
    graph: &SparseGraph,
    mut out: W,
) -> std::io::Result<()> {
    let layers = trace.encoder_attention.len();
    write!(out, "src\tdst\tmean")?;
    for k in 1..=layers {
        write!(out, "\tlayer_{k}")?;
    }
    writeln!(out)?;
    let mean = mean_attention(trace);
    for (e, (&i, &j)) in graph
        .row_indices()
        .iter()
        .zip(graph.col_indices())
        .enumerate()
    {
        write!(out, "{i}\t{j}\t{}", mean[e])?;
        for (enc, dec) in trace.encoder_attention.iter().zip(&trace.decoder_attention) {
            write!(out, "\t{}", (enc[e] + dec[e]) / 2.0)?;
        }
        writeln!(out)?;
    }
    out.flush()
}
