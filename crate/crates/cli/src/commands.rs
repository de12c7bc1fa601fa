use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use gate::checkpoint::{load_checkpoint, save_checkpoint};
use gate::dataset::{benchmark_stats, load_dataset, Dataset};
use gate::experiment::{
    evaluate_with, format_summary, run_once, write_results_csv, write_summary_csv, Evaluation,
    Protocol, RunOutcome,
};
use gate::export::{write_attention, write_embeddings};
use gate::train::{write_loss_csv, Ablation, TrainConfig};

use crate::args::{CheckArgs, ExportArgs, RunArgs};
use crate::config::{dataset_dir, load_manifest, resolve, Resolved};
use crate::error::{CliError, Result};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";
pub const ATTENTION_FILE: &str = "attention.tsv";

fn prepare(args: &RunArgs) -> Result<(Dataset, Resolved)> {
    let manifest = load_manifest(args)?;
    let dir = dataset_dir(args, &manifest)?;
    let dataset = load_dataset(&dir)?;
    let meta_name = dataset.resolved_name(&dir);
    let resolved = resolve(args, &manifest, dir, meta_name)?;
    Ok((dataset, resolved))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_with(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    body(&mut out)
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io(path, e))
}

fn write_run_files(dir: &Path, outcome: &RunOutcome, checkpoint: bool) -> Result<()> {
    create_dir(dir)?;
    write_with(&dir.join(LOSS_FILE), |out| {
        write_loss_csv(&outcome.history, out)
    })?;
    if checkpoint {
        let path = dir.join(CHECKPOINT_FILE);
        save_checkpoint(&outcome.model, &path)?;
    }
    Ok(())
}

pub fn train(args: &RunArgs) -> Result<()> {
    let (dataset, resolved) = prepare(args)?;
    let out = resolved.out_dir()?;
    let protocol = resolved.protocol()?;
    create_dir(out)?;
    let outcome = run_once(&dataset, &resolved.train, &resolved.probe, protocol, 0)?;
    write_run_files(out, &outcome, true)?;
    resolved.manifest("train", &[protocol], 1).write(out)?;
    println!(
        "{},{},{},{}",
        resolved.train.ablation.variant_name(),
        protocol,
        resolved.train.seed,
        outcome.accuracy
    );
    Ok(())
}

fn run_series(
    dataset: &Dataset,
    resolved: &Resolved,
    cfg: &TrainConfig,
    protocol: Protocol,
    dir: &Path,
) -> Result<Evaluation> {
    let failure: Mutex<Option<CliError>> = Mutex::new(None);
    let evaluation = evaluate_with(
        dataset,
        cfg,
        &resolved.probe,
        protocol,
        &resolved.plan,
        |run, outcome| {
            eprintln!(
                "{} {} run {run} seed {}: accuracy {:.4}",
                cfg.ablation.variant_name(),
                protocol,
                outcome.model.seed(),
                outcome.accuracy
            );
            if let Err(e) = write_run_files(&dir.join(format!("run_{run}")), outcome, false) {
                failure.lock().unwrap().get_or_insert(e);
            }
        },
    )?;
    match failure.into_inner().unwrap() {
        Some(e) => Err(e),
        None => Ok(evaluation),
    }
}

fn report(out: &Path, evaluations: &[Evaluation]) -> Result<()> {
    write_with(&out.join(RESULTS_FILE), |w| {
        write_results_csv(evaluations, w)
    })?;
    write_with(&out.join(SUMMARY_FILE), |w| {
        write_summary_csv(evaluations, w)
    })?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    write_results_csv(evaluations, &mut lock)
        .and_then(|_| writeln!(lock))
        .and_then(|_| write_summary_csv(evaluations, &mut lock))
        .map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
    eprint!("{}", format_summary(evaluations));
    Ok(())
}

pub fn eval(args: &RunArgs) -> Result<()> {
    let (dataset, resolved) = prepare(args)?;
    let out = resolved.out_dir()?;
    let protocol = resolved.protocol()?;
    create_dir(out)?;
    let evaluation = run_series(&dataset, &resolved, &resolved.train, protocol, out)?;
    report(out, std::slice::from_ref(&evaluation))?;
    resolved
        .manifest("eval", &[protocol], resolved.plan.runs)
        .write(out)
}

fn variant_dir(variant: Ablation, protocol: Protocol) -> PathBuf {
    let name = variant.variant_name().to_lowercase().replace('/', "-");
    PathBuf::from(format!("{name}_{protocol}"))
}

pub fn ablate(args: &RunArgs) -> Result<()> {
    if args.ablation.is_some() {
        return Err(CliError::usage(
            "ablate runs every variant; --ablation does not apply",
        ));
    }
    let (dataset, resolved) = prepare(args)?;
    let out = resolved.out_dir()?;
    let protocols = resolved
        .protocols
        .clone()
        .unwrap_or_else(|| vec![Protocol::Transductive, Protocol::Inductive]);
    create_dir(out)?;
    let mut evaluations = Vec::new();
    for &protocol in &protocols {
        for variant in Ablation::ALL {
            let cfg = TrainConfig {
                ablation: variant,
                ..resolved.train.clone()
            };
            let dir = out.join(variant_dir(variant, protocol));
            evaluations.push(run_series(&dataset, &resolved, &cfg, protocol, &dir)?);
        }
    }
    report(out, &evaluations)?;
    resolved
        .manifest("ablate", &protocols, resolved.plan.runs)
        .write(out)
}

pub fn export_embeddings(args: &ExportArgs) -> Result<()> {
    let (dataset, resolved) = prepare(&args.run)?;
    let out = resolved.out_dir()?;
    let protocol = resolved.protocol()?;
    let checkpoint = args.checkpoint.clone().or(resolved.checkpoint.clone());
    create_dir(out)?;
    let mut manifest = resolved.manifest("export-embeddings", &[protocol], 1);
    let model = match &checkpoint {
        Some(path) => {
            let model = load_checkpoint(path)?;
            let features = dataset.features.num_features();
            if model.dims()[0] != features {
                return Err(CliError::dataset(format!(
                    "checkpoint expects {} input features, dataset has {features}",
                    model.dims()[0]
                )));
            }
            manifest = Default::default();
            manifest.insert("command", "export-embeddings");
            manifest.insert("dataset", resolved.dataset.display().to_string());
            manifest.insert("checkpoint", path.display().to_string());
            manifest.insert("out", out.display().to_string());
            model
        }
        None => {
            let outcome = run_once(&dataset, &resolved.train, &resolved.probe, protocol, 0)?;
            write_run_files(out, &outcome, true)?;
            outcome.model
        }
    };
    let trace = model
        .forward(&dataset.features, &dataset.graph)
        .map_err(|e| CliError::new(crate::error::Category::Numerical, e.to_string()))?;
    write_with(&out.join(EMBEDDINGS_FILE), |w| {
        write_embeddings(trace.embeddings(), w)
    })?;
    write_with(&out.join(ATTENTION_FILE), |w| {
        write_attention(&trace, &dataset.graph, w)
    })?;
    manifest.write(out)?;
    println!(
        "{} nodes, {} dimensions",
        dataset.num_nodes(),
        model.embedding_dim()
    );
    Ok(())
}

pub fn convert_check(args: &CheckArgs) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let name = args
        .dataset_name
        .as_ref()
        .map(|n| n.to_lowercase())
        .or_else(|| dataset.resolved_name(&args.dataset));
    let split = &dataset.split;
    let found = [
        ("nodes", dataset.num_nodes()),
        ("edges", dataset.graph.num_edges()),
        ("features", dataset.features.num_features()),
        ("classes", dataset.labels.num_classes()),
        ("train", split.train_ids.len()),
        ("val", split.val_ids.len()),
        ("test", split.test_ids.len()),
    ];
    let Some(expected) = name.as_deref().and_then(benchmark_stats) else {
        for (what, n) in found {
            println!("{what}\t{n}");
        }
        eprintln!("no published statistics for '{}'", name.unwrap_or_default());
        return Ok(());
    };
    let mut failed = Vec::new();
    for (what, n) in found {
        let (ok, want) = match what {
            "nodes" => (n == expected.num_nodes, expected.num_nodes.to_string()),
            "edges" => (
                expected.edge_count_matches(n),
                format!("{} or {}", expected.num_edges, expected.dedup_edges),
            ),
            "features" => (
                n == expected.num_features,
                expected.num_features.to_string(),
            ),
            "classes" => (n == expected.num_classes, expected.num_classes.to_string()),
            "train" => (n == expected.train, expected.train.to_string()),
            "val" => (n == expected.val, expected.val.to_string()),
            _ => (n == expected.test, expected.test.to_string()),
        };
        println!(
            "{what}\t{n}\texpected {want}\t{}",
            if ok { "ok" } else { "MISMATCH" }
        );
        if !ok {
            failed.push(what);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::dataset(format!(
            "{} does not match {}: {}",
            args.dataset.display(),
            expected.name,
            failed.join(", ")
        )))
    }
}
