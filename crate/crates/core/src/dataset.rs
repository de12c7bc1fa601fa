//! Canonical on-disk dataset directory.
//!
//! ```text
//! meta.tsv         N<TAB>F<TAB>num_classes[<TAB>name]
//! edges.tsv        src<TAB>dst            (0-based, undirected)
//! features.tsv     N lines of F reals
//! labels.tsv       N lines, one class id each
//! split_train.txt  one node id per line (same for split_val / split_test)
//! ```

use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use thiserror::Error;

use crate::graph::{FeatureMatrix, GraphError, LabelVector, SparseGraph, SplitSpec};

pub const META_FILE: &str = "meta.tsv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const TRAIN_FILE: &str = "split_train.txt";
pub const VAL_FILE: &str = "split_val.txt";
pub const TEST_FILE: &str = "split_test.txt";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: missing file", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: {source}", file.display())]
    Invalid { file: PathBuf, source: GraphError },
}

/// A fully loaded benchmark: graph, attributes, labels, split and an
/// optional dataset name taken from `meta.tsv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: Option<String>,
    pub graph: SparseGraph,
    pub features: FeatureMatrix,
    pub labels: LabelVector,
    pub split: SplitSpec,
}

impl Dataset {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    /// Lower-cased name from `meta.tsv`, or the directory name as a fallback.
    pub fn resolved_name(&self, dir: &Path) -> Option<String> {
        self.name
            .clone()
            .or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()))
            .map(|n| n.to_lowercase())
    }
}

struct Lines {
    path: PathBuf,
    text: String,
}

impl Lines {
    fn open(dir: &Path, name: &str) -> Result<Self, DatasetError> {
        let path = dir.join(name);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Self { path, text }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(DatasetError::MissingFile(path)),
            Err(source) => Err(DatasetError::Io { path, source }),
        }
    }

    /// Non-blank lines with their 1-based line numbers.
    fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim().is_empty())
    }

    fn error(&self, line: usize, message: impl fmt::Display) -> DatasetError {
        DatasetError::Parse {
            file: self.path.clone(),
            line,
            message: message.to_string(),
        }
    }

    fn field<T: FromStr>(&self, line: usize, raw: &str, what: &str) -> Result<T, DatasetError> {
        raw.trim()
            .parse()
            .map_err(|_| self.error(line, format!("cannot parse {what} from {raw:?}")))
    }

    fn invalid(&self, source: GraphError) -> DatasetError {
        DatasetError::Invalid {
            file: self.path.clone(),
            source,
        }
    }
}

struct Meta {
    num_nodes: usize,
    num_features: usize,
    num_classes: usize,
    name: Option<String>,
}

fn read_meta(dir: &Path) -> Result<Meta, DatasetError> {
    let lines = Lines::open(dir, META_FILE)?;
    let mut iter = lines.iter();
    let (no, line) = iter
        .next()
        .ok_or_else(|| lines.error(1, "empty meta file"))?;
    let fields: Vec<&str> = line.split('\t').collect();
    if !(3..=4).contains(&fields.len()) {
        return Err(lines.error(
            no,
            format!(
                "expected 3 or 4 tab-separated fields, found {}",
                fields.len()
            ),
        ));
    }
    let meta = Meta {
        num_nodes: lines.field(no, fields[0], "node count")?,
        num_features: lines.field(no, fields[1], "feature count")?,
        num_classes: lines.field(no, fields[2], "class count")?,
        name: fields
            .get(3)
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty()),
    };
    if let Some((extra, _)) = iter.next() {
        return Err(lines.error(extra, "meta file must hold a single line"));
    }
    if meta.num_nodes == 0 || meta.num_features == 0 || meta.num_classes == 0 {
        return Err(lines.error(no, "counts must be positive"));
    }
    Ok(meta)
}

fn read_edges(dir: &Path, num_nodes: usize) -> Result<SparseGraph, DatasetError> {
    let lines = Lines::open(dir, EDGES_FILE)?;
    let mut edges = Vec::new();
    for (no, line) in lines.iter() {
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.len() {
            2 => {}
            3 => return Err(lines.error(no, "weighted edges are not supported")),
            n => return Err(lines.error(no, format!("expected 2 fields, found {n}"))),
        }
        let src: usize = lines.field(no, fields[0], "source id")?;
        let dst: usize = lines.field(no, fields[1], "target id")?;
        for id in [src, dst] {
            if id >= num_nodes {
                return Err(lines.error(no, format!("node id {id} out of range [0, {num_nodes})")));
            }
        }
        edges.push((src, dst));
    }
    SparseGraph::from_edges(num_nodes, &edges).map_err(|e| lines.invalid(e))
}

fn read_features(dir: &Path, meta: &Meta) -> Result<FeatureMatrix, DatasetError> {
    let lines = Lines::open(dir, FEATURES_FILE)?;
    let mut values = Array2::<f64>::zeros((meta.num_features, meta.num_nodes));
    let mut count = 0;
    for (no, line) in lines.iter() {
        if count == meta.num_nodes {
            return Err(lines.error(no, format!("more than {} feature rows", meta.num_nodes)));
        }
        let mut f = 0;
        for raw in line.split('\t') {
            if f == meta.num_features {
                return Err(lines.error(no, format!("more than {} features", meta.num_features)));
            }
            let v: f64 = lines.field(no, raw, "feature value")?;
            if !v.is_finite() {
                return Err(lines.error(no, format!("non-finite feature value {raw:?}")));
            }
            values[[f, count]] = v;
            f += 1;
        }
        if f != meta.num_features {
            return Err(lines.error(
                no,
                format!("expected {} features, found {f}", meta.num_features),
            ));
        }
        count += 1;
    }
    if count != meta.num_nodes {
        return Err(lines.error(
            count + 1,
            format!("expected {} feature rows, found {count}", meta.num_nodes),
        ));
    }
    FeatureMatrix::new(values).map_err(|e| lines.invalid(e))
}

fn read_labels(dir: &Path, meta: &Meta) -> Result<LabelVector, DatasetError> {
    let lines = Lines::open(dir, LABELS_FILE)?;
    let mut labels = Vec::with_capacity(meta.num_nodes);
    for (no, line) in lines.iter() {
        let label: usize = lines.field(no, line, "class id")?;
        if label >= meta.num_classes {
            return Err(lines.error(
                no,
                format!("class {label} out of range [0, {})", meta.num_classes),
            ));
        }
        labels.push(label);
    }
    if labels.len() != meta.num_nodes {
        return Err(lines.error(
            labels.len() + 1,
            format!("expected {} labels, found {}", meta.num_nodes, labels.len()),
        ));
    }
    LabelVector::new(labels, meta.num_classes).map_err(|e| lines.invalid(e))
}

fn read_ids(dir: &Path, name: &str, num_nodes: usize) -> Result<Vec<usize>, DatasetError> {
    let lines = Lines::open(dir, name)?;
    lines
        .iter()
        .map(|(no, line)| {
            let id: usize = lines.field(no, line, "node id")?;
            if id >= num_nodes {
                return Err(lines.error(no, format!("node id {id} out of range [0, {num_nodes})")));
            }
            Ok(id)
        })
        .collect()
}

/// Loads a canonical dataset directory. The graph is symmetrized, duplicate
/// edges are collapsed and self-loops are added.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    let graph = read_edges(dir, meta.num_nodes)?;
    let features = read_features(dir, &meta)?;
    let labels = read_labels(dir, &meta)?;
    let train = read_ids(dir, TRAIN_FILE, meta.num_nodes)?;
    let val = read_ids(dir, VAL_FILE, meta.num_nodes)?;
    let test = read_ids(dir, TEST_FILE, meta.num_nodes)?;
    let split = SplitSpec::new(train, val, test, meta.num_nodes).map_err(|source| {
        DatasetError::Invalid {
            file: dir.join(TEST_FILE),
            source,
        }
    })?;
    Ok(Dataset {
        name: meta.name,
        graph,
        features,
        labels,
        split,
    })
}

fn write_file(
    path: PathBuf,
    body: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>,
) -> Result<(), DatasetError> {
    let run = || -> io::Result<()> {
        let mut out = BufWriter::new(fs::File::create(&path)?);
        body(&mut out)?;
        out.flush()
    };
    run().map_err(|source| DatasetError::Io {
        path: path.clone(),
        source,
    })
}

/// Writes `dataset` in canonical form. Feature values use Rust's shortest
/// round-trip formatting, so loading the directory again is bit-exact.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let x = dataset.features.values();
    write_file(dir.join(META_FILE), |out| {
        write!(
            out,
            "{}\t{}\t{}",
            dataset.num_nodes(),
            x.nrows(),
            dataset.labels.num_classes()
        )?;
        if let Some(name) = &dataset.name {
            write!(out, "\t{name}")?;
        }
        writeln!(out)
    })?;
    write_file(dir.join(EDGES_FILE), |out| {
        for (i, j) in dataset.graph.edge_list() {
            writeln!(out, "{i}\t{j}")?;
        }
        Ok(())
    })?;
    write_file(dir.join(FEATURES_FILE), |out| {
        for column in x.columns() {
            let row: Vec<String> = column.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join("\t"))?;
        }
        Ok(())
    })?;
    write_file(dir.join(LABELS_FILE), |out| {
        for label in dataset.labels.labels() {
            writeln!(out, "{label}")?;
        }
        Ok(())
    })?;
    for (name, ids) in [
        (TRAIN_FILE, &dataset.split.train_ids),
        (VAL_FILE, &dataset.split.val_ids),
        (TEST_FILE, &dataset.split.test_ids),
    ] {
        write_file(dir.join(name), |out| {
            for id in ids {
                writeln!(out, "{id}")?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

/// Published statistics of the citation benchmarks, keyed by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchmarkStats {
    pub name: &'static str,
    pub num_nodes: usize,
    /// Edge count as published.
    pub num_edges: usize,
    /// Distinct undirected non-loop edges in the public distribution.
    pub dedup_edges: usize,
    pub num_features: usize,
    pub num_classes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

pub const BENCHMARKS: [BenchmarkStats; 3] = [
    BenchmarkStats {
        name: "cora",
        num_nodes: 2708,
        num_edges: 5429,
        dedup_edges: 5278,
        num_features: 1433,
        num_classes: 7,
        train: 140,
        val: 500,
        test: 1000,
    },
    BenchmarkStats {
        name: "citeseer",
        num_nodes: 3327,
        num_edges: 4732,
        dedup_edges: 4552,
        num_features: 3703,
        num_classes: 6,
        train: 120,
        val: 500,
        test: 1000,
    },
    BenchmarkStats {
        name: "pubmed",
        num_nodes: 19717,
        num_edges: 44338,
        dedup_edges: 44324,
        num_features: 500,
        num_classes: 3,
        train: 60,
        val: 500,
        test: 1000,
    },
];

impl BenchmarkStats {
    pub fn edge_count_matches(&self, edges: usize) -> bool {
        edges == self.num_edges || edges == self.dedup_edges
    }
}

pub fn benchmark_stats(name: &str) -> Option<&'static BenchmarkStats> {
    let name = name.to_lowercase();
    BENCHMARKS.iter().find(|b| b.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn tiny(dir: &Path) {
        write(dir, META_FILE, "3\t2\t2\ttiny\n");
        write(dir, EDGES_FILE, "0\t1\n1\t0\n1\t2\n2\t2\n");
        write(dir, FEATURES_FILE, "1\t0\n0.5\t-2\n0\t3e-3\n");
        write(dir, LABELS_FILE, "0\n1\n1\n");
        write(dir, TRAIN_FILE, "0\n1\n");
        write(dir, VAL_FILE, "");
        write(dir, TEST_FILE, "2\n");
    }

    #[test]
    fn loads_tiny_directory() {
        let tmp = tempfile::tempdir().unwrap();
        tiny(tmp.path());
        let ds = load_dataset(tmp.path()).unwrap();
        assert_eq!(ds.name.as_deref(), Some("tiny"));
        assert_eq!(ds.graph.num_edges(), 2);
        assert_eq!(ds.graph.nnz(), 7);
        assert_eq!(
            ds.features.values(),
            &array![[1.0, 0.5, 0.0], [0.0, -2.0, 3e-3]]
        );
        assert_eq!(ds.labels.labels(), &[0, 1, 1]);
        assert_eq!(ds.split.test_ids, vec![2]);
    }

    #[test]
    fn single_node_without_edges() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path();
        write(d, META_FILE, "1\t1\t1\n");
        write(d, EDGES_FILE, "");
        write(d, FEATURES_FILE, "4\n");
        write(d, LABELS_FILE, "0\n");
        write(d, TRAIN_FILE, "0\n");
        write(d, VAL_FILE, "");
        write(d, TEST_FILE, "");
        let ds = load_dataset(d).unwrap();
        assert_eq!(ds.graph.nnz(), 1);
        assert_eq!(ds.graph.neighbors(0), &[0]);
    }

    #[test]
    fn save_then_load_is_identical() {
        let tmp = tempfile::tempdir().unwrap();
        tiny(tmp.path());
        let ds = load_dataset(tmp.path()).unwrap();
        let out = tmp.path().join("copy");
        save_dataset(&ds, &out).unwrap();
        let again = load_dataset(&out).unwrap();
        assert_eq!(again, ds);
        assert_eq!(again.graph.row_offsets(), ds.graph.row_offsets());
        assert_eq!(again.graph.col_indices(), ds.graph.col_indices());
    }

    fn expect_parse_error(file: &str, body: &str, line: usize, needle: &str) {
        let tmp = tempfile::tempdir().unwrap();
        tiny(tmp.path());
        write(tmp.path(), file, body);
        match load_dataset(tmp.path()) {
            Err(DatasetError::Parse {
                file: f,
                line: l,
                message,
            }) => {
                assert!(f.ends_with(file), "{f:?}");
                assert_eq!(l, line, "{message}");
                assert!(message.contains(needle), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn diagnostics_name_file_and_line() {
        expect_parse_error(EDGES_FILE, "0\t1\n0\t7\n", 2, "out of range");
        expect_parse_error(EDGES_FILE, "0\t1\t0.5\n", 1, "weighted");
        expect_parse_error(EDGES_FILE, "0 1\n", 1, "expected 2 fields");
        expect_parse_error(FEATURES_FILE, "1\t0\nNaN\t0\n0\t0\n", 2, "non-finite");
        expect_parse_error(FEATURES_FILE, "1\t0\n1\n0\t0\n", 2, "expected 2 features");
        expect_parse_error(FEATURES_FILE, "1\t0\nx\t0\n0\t0\n", 2, "cannot parse");
        expect_parse_error(LABELS_FILE, "0\n5\n1\n", 2, "out of range");
        expect_parse_error(TEST_FILE, "9\n", 1, "out of range");
        expect_parse_error(META_FILE, "3\t2\n", 1, "expected 3 or 4");
    }

    #[test]
    fn missing_file_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        tiny(tmp.path());
        fs::remove_file(tmp.path().join(LABELS_FILE)).unwrap();
        match load_dataset(tmp.path()) {
            Err(DatasetError::MissingFile(p)) => assert!(p.ends_with(LABELS_FILE)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overlapping_split_is_invalid() {
        let tmp = tempfile::tempdir().unwrap();
        tiny(tmp.path());
        write(tmp.path(), TEST_FILE, "1\n");
        assert!(matches!(
            load_dataset(tmp.path()),
            Err(DatasetError::Invalid { .. })
        ));
    }

    #[test]
    fn benchmark_table() {
        let cora = benchmark_stats("Cora").unwrap();
        assert_eq!(
            (cora.num_nodes, cora.num_features, cora.num_classes),
            (2708, 1433, 7)
        );
        assert_eq!(benchmark_stats("citeseer").unwrap().train, 120);
        assert!(benchmark_stats("reddit").is_none());
    }
}
