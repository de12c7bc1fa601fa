//! Resolution of run settings: explicit flag, then manifest, then the
//! dataset's built-in defaults, then the global defaults.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gate::experiment::{run_seed, Protocol, RunPlan};
use gate::model::Activation;
use gate::probe::ProbeConfig;
use gate::train::{Ablation, TrainConfig};
use serde_json::{Map, Value};

use crate::args::RunArgs;
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_RUNS: usize = 10;

/// Flat key-value run record.
#[derive(Debug, Clone, Default)]
pub struct Manifest(Map<String, Value>);

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        match serde_json::from_str(&text) {
            Ok(Value::Object(map)) => Ok(Self(map)),
            Ok(_) => Err(CliError::usage(format!(
                "{}: manifest must be a JSON object",
                path.display()
            ))),
            Err(e) => Err(CliError::usage(format!("{}: {e}", path.display()))),
        }
    }

    pub fn insert(&mut self, key: &str, value: impl Into<Value>) {
        self.0.insert(key.to_string(), value.into());
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&Value::Object(self.0.clone()))
            .expect("manifest values are plain JSON");
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }

    fn bad(key: &str, want: &str) -> CliError {
        CliError::usage(format!("manifest key '{key}' must be {want}"))
    }

    fn string(&self, key: &str) -> Result<Option<String>> {
        match self.0.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(Self::bad(key, "a string")),
        }
    }

    fn float(&self, key: &str) -> Result<Option<f64>> {
        match self.0.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| Self::bad(key, "a number")),
        }
    }

    fn unsigned(&self, key: &str) -> Result<Option<u64>> {
        match self.0.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| Self::bad(key, "a nonnegative integer")),
        }
    }

    fn count(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.unsigned(key)?.map(|v| v as usize))
    }

    fn boolean(&self, key: &str) -> Result<Option<bool>> {
        match self.0.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Bool(b)) => Ok(Some(*b)),
            Some(_) => Err(Self::bad(key, "true or false")),
        }
    }
}

pub fn parse_dims(text: &str) -> Result<Vec<usize>> {
    let dims = text
        .split(',')
        .map(|part| part.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| CliError::usage(format!("--dims expects positive integers, got '{text}'")))?;
    if dims.is_empty() || dims.contains(&0) {
        return Err(CliError::usage(format!(
            "--dims expects positive integers, got '{text}'"
        )));
    }
    Ok(dims)
}

fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

pub fn parse_protocols(text: &str) -> Result<Vec<Protocol>> {
    text.split(',')
        .map(|p| Protocol::from_str(p.trim()).map_err(|e| CliError::usage(e.to_string())))
        .collect()
}

fn parse_activation(text: &str) -> Result<Activation> {
    Activation::from_name(text).ok_or_else(|| {
        CliError::usage(format!(
            "unknown activation '{text}' (identity, sigmoid, tanh)"
        ))
    })
}

fn parse_ablation(text: &str) -> Result<Ablation> {
    Ablation::from_str(text).map_err(|e| CliError::usage(e.to_string()))
}

/// Settings shared by the commands that train.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub dataset: PathBuf,
    pub dataset_name: Option<String>,
    /// `None` when neither a flag nor the manifest chose one.
    pub protocols: Option<Vec<Protocol>>,
    pub plan: RunPlan,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

pub fn load_manifest(args: &RunArgs) -> Result<Manifest> {
    match &args.manifest {
        Some(path) => Manifest::load(path),
        None => Ok(Manifest::default()),
    }
}

pub fn dataset_dir(args: &RunArgs, manifest: &Manifest) -> Result<PathBuf> {
    match (&args.dataset, manifest.string("dataset")?) {
        (Some(dir), _) => Ok(dir.clone()),
        (None, Some(dir)) => Ok(PathBuf::from(dir)),
        (None, None) => Err(CliError::usage("--dataset is required")),
    }
}

/// `meta_name` is the name recorded with the dataset itself.
pub fn resolve(
    args: &RunArgs,
    manifest: &Manifest,
    dataset: PathBuf,
    meta_name: Option<String>,
) -> Result<Resolved> {
    let dataset_name = match &args.dataset_name {
        Some(n) => Some(n.to_lowercase()),
        None => manifest.string("dataset_name")?.or(meta_name),
    };
    let base = dataset_name
        .as_deref()
        .and_then(TrainConfig::for_dataset)
        .unwrap_or_default();

    macro_rules! pick {
        ($flag:expr, $getter:ident, $key:literal, $default:expr) => {
            match $flag {
                Some(v) => v,
                None => manifest.$getter($key)?.unwrap_or($default),
            }
        };
    }

    let dims = match args.dims.clone().or(manifest.string("dims")?) {
        Some(text) => parse_dims(&text)?,
        None => base.dims.clone(),
    };
    let activation = match args.activation.clone().or(manifest.string("activation")?) {
        Some(text) => parse_activation(&text)?,
        None => base.activation,
    };
    let ablation = match args.ablation.clone().or(manifest.string("ablation")?) {
        Some(text) => parse_ablation(&text)?,
        None => base.ablation,
    };
    let protocols = match args.protocol.clone().or(manifest.string("protocol")?) {
        Some(text) => Some(parse_protocols(&text)?),
        None => None,
    };
    let tied = if args.untied {
        false
    } else {
        manifest.boolean("tied")?.unwrap_or(base.tied)
    };

    let train = TrainConfig {
        lambda: pick!(args.lambda, float, "lambda", base.lambda),
        epochs: pick!(args.epochs, count, "epochs", base.epochs),
        learning_rate: pick!(args.lr, float, "lr", base.learning_rate),
        dims,
        seed: pick!(args.seed, unsigned, "seed", 0),
        tied,
        activation,
        ablation,
        adam_beta1: pick!(args.adam_beta1, float, "adam_beta1", base.adam_beta1),
        adam_beta2: pick!(args.adam_beta2, float, "adam_beta2", base.adam_beta2),
        adam_eps: pick!(args.adam_eps, float, "adam_eps", base.adam_eps),
    };
    train.validate()?;

    let probe_default = ProbeConfig::default();
    let probe = ProbeConfig {
        l2_strength: pick!(args.probe_l2, float, "probe_l2", probe_default.l2_strength),
        max_iterations: pick!(
            args.probe_max_iter,
            count,
            "probe_max_iter",
            probe_default.max_iterations
        ),
        convergence_tol: pick!(
            args.probe_tol,
            float,
            "probe_tol",
            probe_default.convergence_tol
        ),
        history: pick!(
            args.probe_history,
            count,
            "probe_history",
            probe_default.history
        ),
    };
    probe.validate()?;

    let plan = RunPlan {
        runs: pick!(args.runs, count, "runs", DEFAULT_RUNS),
        parallel: pick!(args.parallel, count, "parallel", 1),
        base_seed: train.seed,
    };
    if plan.runs == 0 {
        return Err(CliError::usage("--runs must be at least 1"));
    }
    if plan.parallel == 0 {
        return Err(CliError::usage("--parallel must be at least 1"));
    }

    let out = match &args.out {
        Some(dir) => Some(dir.clone()),
        None => manifest.string("out")?.map(PathBuf::from),
    };
    let checkpoint = manifest.string("checkpoint")?.map(PathBuf::from);

    Ok(Resolved {
        dataset,
        dataset_name,
        protocols,
        plan,
        train,
        probe,
        out,
        checkpoint,
    })
}

impl Resolved {
    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::usage("--out is required"))
    }

    /// The single protocol of `train`, `eval` and `export-embeddings`.
    pub fn protocol(&self) -> Result<Protocol> {
        match self.protocols.as_deref() {
            None => Ok(Protocol::Transductive),
            Some([p]) => Ok(*p),
            Some(_) => Err(CliError::usage("this command takes a single --protocol")),
        }
    }

    /// Every resolved setting; feeding it back through `--manifest`
    /// reproduces the run.
    pub fn manifest(&self, command: &str, protocols: &[Protocol], runs: usize) -> Manifest {
        let t = &self.train;
        let p = &self.probe;
        let mut m = Manifest::default();
        m.insert("command", command);
        m.insert("gate_version", env!("CARGO_PKG_VERSION"));
        m.insert("dataset", self.dataset.display().to_string());
        m.insert(
            "dataset_name",
            self.dataset_name.clone().map_or(Value::Null, Value::from),
        );
        let names: Vec<&str> = protocols.iter().map(|p| p.name()).collect();
        m.insert("protocol", names.join(","));
        m.insert("runs", runs as u64);
        m.insert("parallel", self.plan.parallel as u64);
        m.insert("seed", t.seed);
        let seeds: Vec<u64> = (0..runs).map(|r| run_seed(t.seed, r)).collect();
        m.insert("run_seeds", join(&seeds));
        m.insert("lambda", t.lambda);
        m.insert("epochs", t.epochs as u64);
        m.insert("lr", t.learning_rate);
        m.insert("dims", join(&t.dims));
        m.insert("activation", t.activation.name());
        m.insert("tied", t.tied);
        m.insert("ablation", t.ablation.flag());
        m.insert("adam_beta1", t.adam_beta1);
        m.insert("adam_beta2", t.adam_beta2);
        m.insert("adam_eps", t.adam_eps);
        m.insert("probe_solver", ProbeConfig::SOLVER);
        m.insert("probe_l2", p.l2_strength);
        m.insert("probe_max_iter", p.max_iterations as u64);
        m.insert("probe_tol", p.convergence_tol);
        m.insert("probe_history", p.history as u64);
        if let Some(out) = &self.out {
            m.insert("out", out.display().to_string());
        }
        m
    }
}
