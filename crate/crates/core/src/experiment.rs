//! Transductive and inductive evaluation drivers.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::Dataset;
use crate::graph::{induce_subgraph, GraphError};
use crate::model::{GateModel, ModelError};
use crate::probe::{fit_probe, ProbeConfig, ProbeError, RunStatistics};
use crate::train::{train, Ablation, EpochLoss, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("runs must be at least 1")]
    NoRuns,
    #[error("run {run} (seed {seed}): {source}")]
    Train {
        run: usize,
        seed: u64,
        source: TrainError,
    },
    #[error("run {run} (seed {seed}): {source}")]
    Probe {
        run: usize,
        seed: u64,
        source: ProbeError,
    },
    #[error("run {run} (seed {seed}): {source}")]
    Embed {
        run: usize,
        seed: u64,
        source: ModelError,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl ExperimentError {
    pub fn is_numerical(&self) -> bool {
        match self {
            ExperimentError::Train { source, .. } => source.is_numerical(),
            ExperimentError::Probe {
                source: ProbeError::NonFinite,
                ..
            } => true,
            ExperimentError::Embed { .. } => true,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Protocol {
    /// Whole graph visible during training.
    #[default]
    Transductive,
    /// Test nodes and their edges removed during training.
    Inductive,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Transductive => "transductive",
            Protocol::Inductive => "inductive",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "transductive" => Ok(Protocol::Transductive),
            "inductive" => Ok(Protocol::Inductive),
            other => Err(format!(
                "unknown protocol `{other}` (expected transductive or inductive)"
            )),
        }
    }
}

/// Seed of run `run` in a series starting at `base`.
pub fn run_seed(base: u64, run: usize) -> u64 {
    base.wrapping_add(run as u64)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub accuracy: f64,
    pub model: GateModel,
    pub history: Vec<EpochLoss>,
    /// `d^(L) × N` embeddings of the full graph.
    pub embeddings: ndarray::Array2<f64>,
}

/// Trains once under `protocol` with `cfg.seed` and scores the probe on the
/// test split.
pub fn run_once(
    dataset: &Dataset,
    cfg: &TrainConfig,
    probe: &ProbeConfig,
    protocol: Protocol,
    run: usize,
) -> Result<RunOutcome> {
    let seed = cfg.seed;
    let train_err = |source| ExperimentError::Train { run, seed, source };
    let (model, history) = match protocol {
        Protocol::Transductive => {
            train(&dataset.graph, &dataset.features, cfg).map_err(train_err)?
        }
        Protocol::Inductive => {
            let test: std::collections::HashSet<usize> =
                dataset.split.test_ids.iter().copied().collect();
            let keep: Vec<usize> = (0..dataset.num_nodes())
                .filter(|i| !test.contains(i))
                .collect();
            let sub = induce_subgraph(&dataset.graph, &dataset.features, &keep)?;
            train(&sub.graph, &sub.features, cfg).map_err(train_err)?
        }
    };
    let embeddings = model
        .embed(&dataset.features, &dataset.graph)
        .map_err(|source| ExperimentError::Embed { run, seed, source })?;
    let probe_err = |source| ExperimentError::Probe { run, seed, source };
    let labels = dataset.labels.labels();
    let classes = dataset.labels.num_classes();
    let fitted = fit_probe(
        embeddings.view(),
        labels,
        classes,
        &dataset.split.train_ids,
        probe,
    )
    .map_err(probe_err)?;
    let accuracy = fitted
        .accuracy(embeddings.view(), labels, &dataset.split.test_ids)
        .map_err(probe_err)?;
    Ok(RunOutcome {
        accuracy,
        model,
        history,
        embeddings,
    })
}

/// One row of the per-run results table.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub variant: Ablation,
    pub protocol: Protocol,
    pub run: usize,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub variant: Ablation,
    pub protocol: Protocol,
    pub records: Vec<RunRecord>,
    pub stats: RunStatistics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunPlan {
    pub runs: usize,
    /// Runs executed at once; 1 is sequential.
    pub parallel: usize,
    pub base_seed: u64,
}

impl Default for RunPlan {
    fn default() -> Self {
        Self {
            runs: 10,
            parallel: 1,
            base_seed: 0,
        }
    }
}

fn map_runs<T: Send>(plan: &RunPlan, job: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    if plan.runs == 0 {
        return Err(ExperimentError::NoRuns);
    }
    if plan.parallel <= 1 {
        return (0..plan.runs).map(job).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.parallel)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    pool.install(|| (0..plan.runs).into_par_iter().map(&job).collect())
}

/// `plan.runs` independent runs with seeds `base_seed, base_seed + 1, …`;
/// `on_run` sees each finished run.
pub fn evaluate_with(
    dataset: &Dataset,
    cfg: &TrainConfig,
    probe: &ProbeConfig,
    protocol: Protocol,
    plan: &RunPlan,
    on_run: impl Fn(usize, &RunOutcome) + Sync,
) -> Result<Evaluation> {
    let records = map_runs(plan, |run| {
        let seed = run_seed(plan.base_seed, run);
        let run_cfg = TrainConfig {
            seed,
            ..cfg.clone()
        };
        let outcome = run_once(dataset, &run_cfg, probe, protocol, run)?;
        on_run(run, &outcome);
        Ok(RunRecord {
            variant: cfg.ablation,
            protocol,
            run,
            seed,
            accuracy: outcome.accuracy,
        })
    })?;
    let stats = RunStatistics::new(records.iter().map(|r| r.accuracy).collect());
    Ok(Evaluation {
        variant: cfg.ablation,
        protocol,
        records,
        stats,
    })
}

pub fn evaluate(
    dataset: &Dataset,
    cfg: &TrainConfig,
    probe: &ProbeConfig,
    protocol: Protocol,
    plan: &RunPlan,
) -> Result<Evaluation> {
    evaluate_with(dataset, cfg, probe, protocol, plan, |_, _| {})
}

pub fn evaluate_transductive(
    dataset: &Dataset,
    cfg: &TrainConfig,
    probe: &ProbeConfig,
    plan: &RunPlan,
) -> Result<Evaluation> {
    evaluate(dataset, cfg, probe, Protocol::Transductive, plan)
}

pub fn evaluate_inductive(
    dataset: &Dataset,
    cfg: &TrainConfig,
    probe: &ProbeConfig,
    plan: &RunPlan,
) -> Result<Evaluation> {
    evaluate(dataset, cfg, probe, Protocol::Inductive, plan)
}

/// Every ablation variant under every listed protocol, with shared seeds.
pub fn ablation_suite(
    dataset: &Dataset,
    cfg: &TrainConfig,
    probe: &ProbeConfig,
    protocols: &[Protocol],
    plan: &RunPlan,
) -> Result<Vec<Evaluation>> {
    let mut out = Vec::new();
    for &protocol in protocols {
        for variant in Ablation::ALL {
            let variant_cfg = TrainConfig {
                ablation: variant,
                ..cfg.clone()
            };
            out.push(evaluate(dataset, &variant_cfg, probe, protocol, plan)?);
        }
    }
    Ok(out)
}

pub const RESULTS_CSV_HEADER: &str = "variant,protocol,run,seed,accuracy";
pub const SUMMARY_CSV_HEADER: &str = "variant,protocol,mean,std,runs";

pub fn write_results_csv<W: Write>(evaluations: &[Evaluation], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{RESULTS_CSV_HEADER}")?;
    for r in evaluations.iter().flat_map(|e| &e.records) {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.variant.variant_name(),
            r.protocol,
            r.run,
            r.seed,
            r.accuracy
        )?;
    }
    out.flush()
}

pub fn write_summary_csv<W: Write>(evaluations: &[Evaluation], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SUMMARY_CSV_HEADER}")?;
    for e in evaluations {
        writeln!(
            out,
            "{},{},{},{},{}",
            e.variant.variant_name(),
            e.protocol,
            e.stats.mean,
            e.stats.std,
            e.stats.runs()
        )?;
    }
    out.flush()
}

/// Human-readable summary in percent.
pub fn format_summary(evaluations: &[Evaluation]) -> String {
    let mut s = format!(
        "{:<8} {:<13} {:>16} {:>5}\n",
        "variant", "protocol", "accuracy (%)", "runs"
    );
    for e in evaluations {
        s.push_str(&format!(
            "{:<8} {:<13} {:>9.2} ± {:<4.2} {:>5}\n",
            e.variant.variant_name(),
            e.protocol,
            100.0 * e.stats.mean,
            100.0 * e.stats.std,
            e.stats.runs()
        ));
    }
    s
}
