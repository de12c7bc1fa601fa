//! Graph attention auto-encoder for unsupervised node embedding.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod experiment;
pub mod export;
pub mod graph;
pub mod model;
pub mod probe;
pub mod synthetic;
pub mod train;
