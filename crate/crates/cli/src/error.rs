use std::fmt;
use std::path::Path;
use std::process::ExitCode;

use gate::checkpoint::CheckpointError;
use gate::dataset::DatasetError;
use gate::experiment::ExperimentError;
use gate::graph::GraphError;
use gate::probe::ProbeError;
use gate::train::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Usage,
    Dataset,
    Numerical,
    Checkpoint,
    Io,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Usage => "usage",
            Category::Dataset => "dataset",
            Category::Numerical => "numerical",
            Category::Checkpoint => "checkpoint",
            Category::Io => "io",
        }
    }

    pub fn exit_code(self) -> ExitCode {
        ExitCode::from(match self {
            Category::Usage => 2,
            Category::Dataset => 3,
            Category::Numerical => 4,
            Category::Checkpoint | Category::Io => 1,
        })
    }
}

#[derive(Debug)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl CliError {
    pub fn new(category: Category, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Category::Usage, message)
    }

    pub fn dataset(message: impl Into<String>) -> Self {
        Self::new(Category::Dataset, message)
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self::new(Category::Io, format!("{}: {err}", path.display()))
    }
}

/// `error[category]: message`, flattened to one line.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flat = self
            .message
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        write!(f, "error[{}]: {flat}", self.category.name())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        Self::dataset(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        Self::dataset(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        Self::new(Category::Checkpoint, e.to_string())
    }
}

fn train_category(e: &TrainError) -> Category {
    match e {
        e if e.is_numerical() => Category::Numerical,
        TrainError::Config(_) => Category::Usage,
        TrainError::Io(_) => Category::Io,
        _ => Category::Dataset,
    }
}

fn probe_category(e: &ProbeError) -> Category {
    match e {
        ProbeError::NonFinite => Category::Numerical,
        ProbeError::Config(_) => Category::Usage,
        _ => Category::Dataset,
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        Self::new(train_category(&e), e.to_string())
    }
}

impl From<ProbeError> for CliError {
    fn from(e: ProbeError) -> Self {
        Self::new(probe_category(&e), e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        let category = match &e {
            e if e.is_numerical() => Category::Numerical,
            ExperimentError::Train { source, .. } => train_category(source),
            ExperimentError::Probe { source, .. } => probe_category(source),
            ExperimentError::NoRuns => Category::Usage,
            ExperimentError::Graph(_) => Category::Dataset,
            _ => Category::Io,
        };
        Self::new(category, e.to_string())
    }
}
