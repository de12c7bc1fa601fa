//! Multinomial logistic-regression probe on frozen embeddings, and run
//! statistics.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("probe needs at least one training node")]
    EmptyTrainSet,
    #[error("training labels contain a single class ({0}); nothing to separate")]
    SingleClass(usize),
    #[error("embeddings contain non-finite values")]
    NonFinite,
    #[error("node {id} out of range for {num_nodes} embedded nodes")]
    NodeOutOfRange { id: usize, num_nodes: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("invalid probe config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, ProbeError>;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    /// Weight on `½‖W‖²`; the bias is not penalized.
    pub l2_strength: f64,
    pub max_iterations: usize,
    /// Stop once every gradient component is below this.
    pub convergence_tol: f64,
    /// Correction pairs kept by L-BFGS.
    pub history: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2_strength: 1e-2,
            max_iterations: 1000,
            convergence_tol: 1e-6,
            history: 10,
        }
    }
}

impl ProbeConfig {
    pub const SOLVER: &'static str = "lbfgs";

    pub fn validate(&self) -> Result<()> {
        if !(self.l2_strength >= 0.0 && self.l2_strength.is_finite()) {
            return Err(ProbeError::Config(format!(
                "l2 strength must be nonnegative, got {}",
                self.l2_strength
            )));
        }
        if self.max_iterations == 0 {
            return Err(ProbeError::Config(
                "max iterations must be at least 1".into(),
            ));
        }
        if self.convergence_tol.is_nan() || self.convergence_tol <= 0.0 {
            return Err(ProbeError::Config(format!(
                "tolerance must be positive, got {}",
                self.convergence_tol
            )));
        }
        if self.history == 0 {
            return Err(ProbeError::Config("history must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    /// `d × C`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

/// Training rows: the embedding columns of `ids`, as an `n × d` matrix.
fn gather(embeddings: ArrayView2<'_, f64>, ids: &[usize]) -> Result<Array2<f64>> {
    let num_nodes = embeddings.ncols();
    let mut out = Array2::zeros((ids.len(), embeddings.nrows()));
    for (row, &id) in ids.iter().enumerate() {
        if id >= num_nodes {
            return Err(ProbeError::NodeOutOfRange { id, num_nodes });
        }
        out.row_mut(row).assign(&embeddings.column(id));
    }
    Ok(out)
}

struct Objective<'a> {
    z: &'a Array2<f64>,
    y: &'a [usize],
    classes: usize,
    l2: f64,
}

impl Objective<'_> {
    fn dim(&self) -> usize {
        (self.z.ncols() + 1) * self.classes
    }

    fn unpack(&self, theta: &Array1<f64>) -> (Array2<f64>, Array1<f64>) {
        let d = self.z.ncols();
        let w = theta
            .slice(s![..d * self.classes])
            .to_owned()
            .into_shape_with_order((d, self.classes))
            .unwrap();
        (w, theta.slice(s![d * self.classes..]).to_owned())
    }

    fn value_and_gradient(&self, theta: &Array1<f64>) -> (f64, Array1<f64>) {
        let (w, b) = self.unpack(theta);
        let n = self.z.nrows() as f64;
        let mut p = self.z.dot(&w) + &b;
        let mut loss = 0.0;
        for (mut row, &label) in p.axis_iter_mut(Axis(0)).zip(self.y) {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let total = row.sum();
            loss += total.ln() - row[label].ln();
            row /= total;
            row[label] -= 1.0;
        }
        let grad_w = self.z.t().dot(&p) / n + &w * self.l2;
        let grad_b = p.sum_axis(Axis(0)) / n;
        let value = loss / n + 0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>();
        let mut grad = Array1::zeros(self.dim());
        grad.slice_mut(s![..grad_w.len()])
            .assign(&Array1::from_iter(grad_w.iter().copied()));
        grad.slice_mut(s![grad_w.len()..]).assign(&grad_b);
        (value, grad)
    }
}

fn max_abs(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// L-BFGS with Armijo backtracking, starting from zero.
fn minimize(obj: &Objective<'_>, cfg: &ProbeConfig) -> (Array1<f64>, f64, usize, bool) {
    let mut theta = Array1::zeros(obj.dim());
    let (mut f, mut g) = obj.value_and_gradient(&theta);
    let mut pairs: Vec<(Array1<f64>, Array1<f64>, f64)> = Vec::new();
    for iter in 0..cfg.max_iterations {
        if max_abs(&g) <= cfg.convergence_tol {
            return (theta, f, iter, true);
        }
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * s.dot(&q);
            q.scaled_add(-a, y);
            alphas.push(a);
        }
        let gamma = match pairs.last() {
            Some((s, y, _)) => s.dot(y) / y.dot(y),
            None => 1.0 / max_abs(&g).max(1.0),
        };
        q *= gamma;
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * y.dot(&q);
            q.scaled_add(a - b, s);
        }
        let mut direction = -q;
        let mut slope = g.dot(&direction);
        if slope >= 0.0 {
            pairs.clear();
            direction = -g.clone();
            slope = g.dot(&direction);
        }
        let mut step = 1.0;
        let accepted = loop {
            let candidate = &theta + &(&direction * step);
            let (fc, gc) = obj.value_and_gradient(&candidate);
            if fc.is_finite() && fc <= f + 1e-4 * step * slope {
                break Some((candidate, fc, gc));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        let Some((next, f_next, g_next)) = accepted else {
            return (theta, f, iter, false);
        };
        let s = &next - &theta;
        let y = &g_next - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.dot(&s).sqrt() * y.dot(&y).sqrt() {
            if pairs.len() == cfg.history {
                pairs.remove(0);
            }
            pairs.push((s, y, 1.0 / sy));
        }
        theta = next;
        f = f_next;
        g = g_next;
    }
    let converged = max_abs(&g) <= cfg.convergence_tol;
    (theta, f, cfg.max_iterations, converged)
}

/// Fits a softmax classifier to the embedding columns of `train_ids`.
/// `embeddings` is `d × N`.
pub fn fit_probe(
    embeddings: ArrayView2<'_, f64>,
    labels: &[usize],
    num_classes: usize,
    train_ids: &[usize],
    cfg: &ProbeConfig,
) -> Result<Probe> {
    cfg.validate()?;
    if train_ids.is_empty() {
        return Err(ProbeError::EmptyTrainSet);
    }
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(ProbeError::NonFinite);
    }
    let z = gather(embeddings, train_ids)?;
    let y = train_ids
        .iter()
        .map(|&id| {
            let label = *labels.get(id).ok_or(ProbeError::NodeOutOfRange {
                id,
                num_nodes: labels.len(),
            })?;
            if label >= num_classes {
                return Err(ProbeError::LabelOutOfRange { label, num_classes });
            }
            Ok(label)
        })
        .collect::<Result<Vec<_>>>()?;
    if y.iter().all(|&c| c == y[0]) {
        return Err(ProbeError::SingleClass(y[0]));
    }
    let obj = Objective {
        z: &z,
        y: &y,
        classes: num_classes,
        l2: cfg.l2_strength,
    };
    let (theta, objective, iterations, converged) = minimize(&obj, cfg);
    let (weights, bias) = obj.unpack(&theta);
    Ok(Probe {
        weights,
        bias,
        iterations,
        converged,
        objective,
    })
}

impl Probe {
    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    /// Most probable class of each listed node; ties go to the lower class.
    pub fn predict(&self, embeddings: ArrayView2<'_, f64>, ids: &[usize]) -> Result<Vec<usize>> {
        let z = gather(embeddings, ids)?;
        let logits = z.dot(&self.weights) + &self.bias;
        Ok(logits
            .axis_iter(Axis(0))
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (c, &v)| {
                        if v > best.1 {
                            (c, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }

    /// Fraction of `ids` classified correctly.
    pub fn accuracy(
        &self,
        embeddings: ArrayView2<'_, f64>,
        labels: &[usize],
        ids: &[usize],
    ) -> Result<f64> {
        if ids.is_empty() {
            return Ok(0.0);
        }
        let predicted = self.predict(embeddings, ids)?;
        let correct = predicted
            .iter()
            .zip(ids)
            .filter(|(p, &id)| **p == labels[id])
            .count();
        Ok(correct as f64 / ids.len() as f64)
    }
}

/// Accuracies of repeated runs with their mean and sample standard
/// deviation (zero for a single run).
#[derive(Debug, Clone, PartialEq)]
pub struct RunStatistics {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl RunStatistics {
    pub fn new(accuracies: Vec<f64>) -> Self {
        let n = accuracies.len();
        let mean = if n == 0 {
            f64::NAN
        } else {
            accuracies.iter().sum::<f64>() / n as f64
        };
        let std = if n < 2 {
            0.0
        } else {
            (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self {
            accuracies,
            mean,
            std,
        }
    }

    pub fn runs(&self) -> usize {
        self.accuracies.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separable_clusters_fit_perfectly() {
        let h = array![
            [-2.0, -1.5, -1.8, 1.7, 2.2, 1.9],
            [0.1, -0.2, 0.3, 0.0, 0.2, -0.1]
        ];
        let labels = [0, 0, 0, 1, 1, 1];
        let ids: Vec<usize> = (0..6).collect();
        let probe = fit_probe(h.view(), &labels, 2, &ids, &ProbeConfig::default()).unwrap();
        assert!(probe.converged);
        assert_eq!(probe.accuracy(h.view(), &labels, &ids).unwrap(), 1.0);
    }

    #[test]
    fn zero_embeddings_predict_majority() {
        let h = Array2::zeros((4, 7));
        let labels = [2, 2, 2, 0, 1, 2, 0];
        let train = [0, 1, 2, 3, 4];
        let probe = fit_probe(h.view(), &labels, 3, &train, &ProbeConfig::default()).unwrap();
        let pred = probe.predict(h.view(), &[5, 6]).unwrap();
        assert_eq!(pred, vec![2, 2]);
        assert_eq!(probe.accuracy(h.view(), &labels, &[5, 6]).unwrap(), 0.5);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let h = Array2::ones((2, 3));
        let cfg = ProbeConfig::default();
        assert_eq!(
            fit_probe(h.view(), &[0, 1, 0], 2, &[], &cfg),
            Err(ProbeError::EmptyTrainSet)
        );
        assert_eq!(
            fit_probe(h.view(), &[1, 1, 0], 2, &[0, 1], &cfg),
            Err(ProbeError::SingleClass(1))
        );
        let mut bad = h.clone();
        bad[[0, 2]] = f64::NAN;
        assert_eq!(
            fit_probe(bad.view(), &[0, 1, 0], 2, &[0, 1], &cfg),
            Err(ProbeError::NonFinite)
        );
        assert!(matches!(
            fit_probe(h.view(), &[0, 1, 0], 2, &[0, 5], &cfg),
            Err(ProbeError::NodeOutOfRange { .. })
        ));
    }

    #[test]
    fn statistics() {
        let s = RunStatistics::new(vec![0.8, 0.82, 0.84]);
        assert!((s.mean - 0.82).abs() < 1e-15);
        assert!((s.std - 0.02).abs() < 1e-12);
        let one = RunStatistics::new(vec![0.75]);
        assert_eq!((one.mean, one.std, one.runs()), (0.75, 0.0, 1));
    }
}
