//! Reconstruction losses, Adam and the full-batch epoch loop.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::Array2;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::graph::{FeatureMatrix, SparseGraph};
use crate::model::{init_model, Activation, ForwardTrace, GateModel, ModelError, PreparedFeatures};

/// Guard inside the square root of each residual norm.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("epoch {epoch}: {source}")]
    Numerical { epoch: usize, source: ModelError },
    #[error("epoch {epoch}: non-finite loss {value}")]
    NonFiniteLoss { epoch: usize, value: f64 },
    #[error("non-finite gradient in parameter {param} at step {step}")]
    NonFiniteGradient { param: usize, step: u64 },
    #[error("adam state holds {expected} tensors, got {found}")]
    ParamCount { expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl TrainError {
    /// Whether the failure came from numbers going bad mid-training.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TrainError::Numerical { .. }
                | TrainError::NonFiniteLoss { .. }
                | TrainError::NonFiniteGradient { .. }
                | TrainError::Model(ModelError::Autodiff(AutodiffError::NonFinite { .. }))
        )
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Ablation {
    #[default]
    None,
    /// Uniform neighborhood weights instead of learned attention.
    NoAttention,
    /// Structure term dropped from the loss.
    NoStructure,
    /// Feature term dropped from the loss.
    NoFeatures,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::None,
        Ablation::NoFeatures,
        Ablation::NoStructure,
        Ablation::NoAttention,
    ];

    /// Short flag form: `none`, `A`, `S`, `F`.
    pub fn flag(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoAttention => "A",
            Ablation::NoStructure => "S",
            Ablation::NoFeatures => "F",
        }
    }

    pub fn variant_name(self) -> &'static str {
        match self {
            Ablation::None => "GATE",
            Ablation::NoAttention => "GATE/A",
            Ablation::NoStructure => "GATE/S",
            Ablation::NoFeatures => "GATE/F",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Ablation::None),
            "A" | "a" | "no_attention" => Ok(Ablation::NoAttention),
            "S" | "s" | "no_structure" => Ok(Ablation::NoStructure),
            "F" | "f" | "no_features" => Ok(Ablation::NoFeatures),
            other => Err(format!(
                "unknown ablation `{other}` (expected none, A, S or F)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Layer widths, excluding the input feature count.
    pub dims: Vec<usize>,
    pub seed: u64,
    pub tied: bool,
    pub activation: Activation,
    pub ablation: Ablation,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            epochs: 100,
            learning_rate: 1e-4,
            dims: vec![512, 512],
            seed: 0,
            tied: true,
            activation: Activation::Identity,
            ablation: Ablation::None,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Published defaults for the three citation benchmarks.
    pub fn for_dataset(name: &str) -> Option<Self> {
        let (lambda, epochs) = match name.to_ascii_lowercase().as_str() {
            "cora" => (0.5, 100),
            "citeseer" => (20.0, 100),
            "pubmed" => (0.5, 500),
            _ => return None,
        };
        Some(Self {
            lambda,
            epochs,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(TrainError::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!(
                "lambda must be a finite nonnegative number, got {}",
                self.lambda
            ));
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return fail(format!(
                "layer widths must be nonempty and positive, got {:?}",
                self.dims
            ));
        }
        for (name, b) in [("beta1", self.adam_beta1), ("beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return fail(format!("adam eps must be positive, got {}", self.adam_eps));
        }
        Ok(())
    }

    /// Structure weight after the ablation switch.
    pub fn effective_lambda(&self) -> f64 {
        match self.ablation {
            Ablation::NoStructure => 0.0,
            _ => self.lambda,
        }
    }

    pub fn uses_feature_loss(&self) -> bool {
        self.ablation != Ablation::NoFeatures
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Records `Σ_i sqrt(‖x_i − x̂_i‖² + ε)` on the tape.
pub fn record_feature_loss(
    tape: &mut Tape<'_>,
    x: Var,
    x_hat: Var,
) -> std::result::Result<Var, AutodiffError> {
    let residual = tape.sub(x, x_hat)?;
    tape.column_norm_sum(residual, NORM_EPS)
}

/// Records `Σ_{(i,j)} softplus(−h_iᵀ h_j)` over every stored pair.
pub fn record_structure_loss<'g>(
    tape: &mut Tape<'g>,
    h: Var,
    graph: &'g SparseGraph,
) -> std::result::Result<Var, AutodiffError> {
    let z = tape.edge_inner_products(h, graph)?;
    tape.softplus_neg_sum(z)
}

pub fn feature_loss(x: &FeatureMatrix, x_hat: &Array2<f64>) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape
        .constant(x.values().clone())
        .map_err(ModelError::from)?;
    let b = tape.constant(x_hat.clone()).map_err(ModelError::from)?;
    let loss = record_feature_loss(&mut tape, a, b).map_err(ModelError::from)?;
    Ok(tape.scalar(loss))
}

pub fn structure_loss(h: &Array2<f64>, graph: &SparseGraph) -> Result<f64> {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone()).map_err(ModelError::from)?;
    let loss = record_structure_loss(&mut tape, hv, graph).map_err(ModelError::from)?;
    Ok(tape.scalar(loss))
}

/// Loss of a materialized forward pass under `cfg`'s weighting and ablation.
pub fn total_loss(
    trace: &ForwardTrace,
    x: &FeatureMatrix,
    graph: &SparseGraph,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    if cfg.uses_feature_loss() {
        total += feature_loss(x, trace.reconstruction())?;
    }
    let lambda = cfg.effective_lambda();
    if lambda != 0.0 {
        total += lambda * structure_loss(trace.embeddings(), graph)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[&Array2<f64>]) -> Self {
        let zeros: Vec<_> = params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Nothing changes when a gradient is
    /// not finite.
    pub fn update(
        &mut self,
        params: Vec<&mut Array2<f64>>,
        grads: &[Array2<f64>],
        cfg: &AdamConfig,
    ) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(TrainError::ParamCount {
                expected: self.first.len(),
                found: params.len().min(grads.len()),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.dim() != g.dim() || p.dim() != self.first[i].dim() {
                return Err(TrainError::Config(format!(
                    "gradient {i} has shape {:?}, parameter {:?}",
                    g.dim(),
                    p.dim()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NonFiniteGradient {
                    param: i,
                    step: self.step + 1,
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
                });
        }
        Ok(())
    }
}

/// Losses measured on one epoch's forward pass, before its update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub feature_loss: f64,
    /// Unweighted structure term.
    pub structure_loss: f64,
    /// The optimized objective.
    pub total_loss: f64,
}

pub const LOSS_CSV_HEADER: &str = "epoch,feature_loss,structure_loss,total_loss";

pub fn write_loss_csv<W: Write>(history: &[EpochLoss], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{LOSS_CSV_HEADER}")?;
    for e in history {
        writeln!(
            out,
            "{},{},{},{}",
            e.epoch, e.feature_loss, e.structure_loss, e.total_loss
        )?;
    }
    out.flush()
}

/// Loss and gradients of one full-graph pass.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub feature_loss: f64,
    pub structure_loss: f64,
    pub total_loss: f64,
    /// In [`GateModel::parameters`] order.
    pub gradients: Vec<Array2<f64>>,
}

/// Forward and backward pass of `model` under `cfg`'s objective.
pub fn loss_and_gradients(
    model: &GateModel,
    features: &PreparedFeatures,
    graph: &SparseGraph,
    cfg: &TrainConfig,
) -> std::result::Result<Evaluated, ModelError> {
    let mut tape = Tape::new();
    let rec = model.record_forward(&mut tape, features, graph, true)?;
    let feature = record_feature_loss(&mut tape, rec.input(), rec.reconstruction())?;
    let structure = record_structure_loss(&mut tape, rec.embeddings(), graph)?;
    let lambda = cfg.effective_lambda();
    let loss = match (cfg.uses_feature_loss(), lambda != 0.0) {
        (true, false) => feature,
        (use_features, _) => {
            let weighted = tape.scale(structure, lambda)?;
            if use_features {
                tape.add(feature, weighted)?
            } else {
                weighted
            }
        }
    };
    let grads = tape.backward(loss)?;
    Ok(Evaluated {
        feature_loss: tape.scalar(feature),
        structure_loss: tape.scalar(structure),
        total_loss: tape.scalar(loss),
        gradients: rec.params.iter().map(|&p| grads.dense(&tape, p)).collect(),
    })
}

/// Owns a model and optimizer state and advances them one epoch at a time.
pub struct Trainer<'g> {
    model: GateModel,
    adam: AdamState,
    features: PreparedFeatures,
    graph: &'g SparseGraph,
    cfg: TrainConfig,
    epoch: usize,
}

impl<'g> Trainer<'g> {
    pub fn new(
        model: GateModel,
        features: &FeatureMatrix,
        graph: &'g SparseGraph,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        features.check_matches(graph).map_err(ModelError::from)?;
        let adam = AdamState::new(&model.parameters());
        Ok(Self {
            model,
            adam,
            features: PreparedFeatures::new(features),
            graph,
            cfg,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &GateModel {
        &self.model
    }

    pub fn into_model(self) -> GateModel {
        self.model
    }

    pub fn step(&mut self) -> Result<EpochLoss> {
        let epoch = self.epoch + 1;
        let eval = loss_and_gradients(&self.model, &self.features, self.graph, &self.cfg)
            .map_err(|source| TrainError::Numerical { epoch, source })?;
        if !eval.total_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                value: eval.total_loss,
            });
        }
        self.adam.update(
            self.model.parameters_mut(),
            &eval.gradients,
            &self.cfg.adam(),
        )?;
        self.epoch = epoch;
        Ok(EpochLoss {
            epoch,
            feature_loss: eval.feature_loss,
            structure_loss: eval.structure_loss,
            total_loss: eval.total_loss,
        })
    }
}

/// Fresh model for `cfg` on inputs with `num_features` rows.
pub fn initial_model(num_features: usize, cfg: &TrainConfig) -> Result<GateModel> {
    let mut dims = vec![num_features];
    dims.extend(&cfg.dims);
    Ok(init_model(&dims, cfg.seed, cfg.tied, cfg.activation)?
        .with_attention_ablated(cfg.ablation == Ablation::NoAttention))
}

/// Trains from a seeded initialization for `cfg.epochs` epochs.
pub fn train(
    graph: &SparseGraph,
    features: &FeatureMatrix,
    cfg: &TrainConfig,
) -> Result<(GateModel, Vec<EpochLoss>)> {
    train_with(graph, features, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    graph: &SparseGraph,
    features: &FeatureMatrix,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<(GateModel, Vec<EpochLoss>)> {
    cfg.validate()?;
    let model = initial_model(features.num_features(), cfg)?;
    let mut trainer = Trainer::new(model, features, graph, cfg.clone())?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let loss = trainer.step()?;
        on_epoch(&loss);
        history.push(loss);
    }
    Ok((trainer.into_model(), history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar_adam(w0: f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        w
    }

    #[test]
    fn adam_matches_scalar_oracle_on_square() {
        let mut w = array![[1.0]];
        let mut state = AdamState::new(&[&w]);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        for _ in 0..3 {
            let g = w.mapv(|x| 2.0 * x);
            state.update(vec![&mut w], &[g], &cfg).unwrap();
        }
        assert!((w[[0, 0]] - scalar_adam(1.0, 0.1, 3)).abs() < 1e-12);
        assert_eq!(state.step_count(), 3);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        for g in [1e-3, 0.7, -250.0] {
            let mut w = array![[0.0]];
            let mut state = AdamState::new(&[&w]);
            state
                .update(vec![&mut w], &[array![[g]]], &AdamConfig::default())
                .unwrap();
            assert!((w[[0, 0]].abs() - 1e-4).abs() < 1e-9, "{g}");
            assert_eq!(w[[0, 0]].signum(), -g.signum());
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut w = array![[1.5, -2.0]];
        let mut state = AdamState::new(&[&w]);
        state
            .update(
                vec![&mut w],
                &[Array2::zeros((1, 2))],
                &AdamConfig::default(),
            )
            .unwrap();
        assert_eq!(w, array![[1.5, -2.0]]);
    }

    #[test]
    fn adam_rejects_nan_gradient() {
        let mut w = array![[1.0]];
        let mut state = AdamState::new(&[&w]);
        let err = state
            .update(vec![&mut w], &[array![[f64::NAN]]], &AdamConfig::default())
            .unwrap_err();
        assert!(matches!(
            err,
            TrainError::NonFiniteGradient { param: 0, step: 1 }
        ));
        assert_eq!(w, array![[1.0]]);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn feature_loss_cases() {
        let x = FeatureMatrix::new(array![[3.0], [4.0]]).unwrap();
        assert!((feature_loss(&x, &Array2::zeros((2, 1))).unwrap() - 5.0).abs() < 1e-12);
        let y = FeatureMatrix::new(array![[1.0, 2.0, 3.0], [0.0, -1.0, 5.0]]).unwrap();
        let same = feature_loss(&y, y.values()).unwrap();
        assert!(same > 0.0 && same <= 3.0 * 1e-6 * (1.0 + 1e-9));
    }

    #[test]
    fn structure_loss_cases() {
        let g = SparseGraph::from_edges(4, &[(0, 1), (1, 2)]).unwrap();
        let zero = structure_loss(&Array2::zeros((3, 4)), &g).unwrap();
        assert!((zero - g.nnz() as f64 * 2f64.ln()).abs() < 1e-12);
        let single = SparseGraph::from_edges(1, &[]).unwrap();
        let saturated = structure_loss(&array![[50.0]], &single).unwrap();
        assert!((0.0..1e-9).contains(&saturated));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            TrainConfig {
                lambda: -1.0,
                ..Default::default()
            },
            TrainConfig {
                adam_beta1: 1.0,
                ..Default::default()
            },
            TrainConfig {
                adam_beta2: -0.1,
                ..Default::default()
            },
            TrainConfig {
                dims: vec![],
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(
                matches!(cfg.validate(), Err(TrainError::Config(_))),
                "{cfg:?}"
            );
        }
    }

    #[test]
    fn dataset_defaults() {
        let cora = TrainConfig::for_dataset("cora").unwrap();
        assert_eq!((cora.lambda, cora.epochs), (0.5, 100));
        let citeseer = TrainConfig::for_dataset("Citeseer").unwrap();
        assert_eq!((citeseer.lambda, citeseer.epochs), (20.0, 100));
        let pubmed = TrainConfig::for_dataset("pubmed").unwrap();
        assert_eq!((pubmed.lambda, pubmed.epochs), (0.5, 500));
        assert_eq!(pubmed.dims, vec![512, 512]);
        assert_eq!(pubmed.learning_rate, 1e-4);
        assert!(TrainConfig::for_dataset("reddit").is_none());
    }

    #[test]
    fn ablation_parsing() {
        for a in Ablation::ALL {
            assert_eq!(a.flag().parse::<Ablation>().unwrap(), a);
        }
        assert!("X".parse::<Ablation>().is_err());
    }

    #[test]
    fn loss_csv_format() {
        let mut buf = Vec::new();
        let h = [EpochLoss {
            epoch: 1,
            feature_loss: 2.5,
            structure_loss: 1.0,
            total_loss: 3.0,
        }];
        write_loss_csv(&h, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,feature_loss,structure_loss,total_loss\n1,2.5,1,3\n"
        );
    }
}
