//! Datasets: tabular and sequence ingestion, standardization, splits and
//! mini-batch indices.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Inputs;
use crate::rng::{stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
}

/// A single target value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Real(f64),
    Class(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Real(Vec<f64>),
    /// Dense class indices plus the label each index stands for.
    Class { labels: Vec<usize>, classes: Vec<String> },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Class { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Target {
        match self {
            Targets::Real(v) => Target::Real(v[i]),
            Targets::Class { labels, .. } => Target::Class(labels[i]),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Real(v) => Targets::Real(idx.iter().map(|&i| v[i]).collect()),
            Targets::Class { labels, classes } => Targets::Class {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                classes: classes.clone(),
            },
        }
    }

    pub fn task(&self) -> TaskKind {
        match self {
            Targets::Real(_) => TaskKind::Regression,
            Targets::Class { .. } => TaskKind::Classification,
        }
    }
}

/// Per-column affine transform fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Columns with zero variance; these pass through unchanged.
    pub constant_columns: Vec<usize>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        let mut constant_columns = Vec::new();
        for (j, col) in x.column_iter().enumerate() {
            let mu = col.sum() / n;
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                mean.push(mu);
                scale.push(var.sqrt());
            } else {
                constant_columns.push(j);
                mean.push(0.0);
                scale.push(1.0);
            }
        }
        Self {
            mean,
            scale,
            constant_columns,
        }
    }

    pub fn apply(&self, x: &mut DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.mean.len() {
            return Err(Error::shape(
                "standardize",
                format!("{} feature columns", self.mean.len()),
                x.ncols(),
            ));
        }
        for (j, mut col) in x.column_iter_mut().enumerate() {
            for v in col.iter_mut() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        Ok(())
    }

    pub fn has_constant_columns(&self) -> bool {
        !self.constant_columns.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Inputs,
    pub targets: Targets,
    /// Column names of tabular features (header order, label removed).
    pub feature_names: Vec<String>,
    /// Symbols of sequence inputs, sorted.
    pub alphabet: Option<Vec<u8>>,
    /// Transform already applied to `inputs`, if any.
    pub standardizer: Option<Standardizer>,
}

impl Dataset {
    pub fn new(inputs: Inputs, targets: Targets) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Input(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if let Targets::Class { labels, classes } = &targets {
            if let Some(l) = labels.iter().find(|&&l| l >= classes.len()) {
                return Err(Error::Input(format!("class index {l} out of range for {} classes", classes.len())));
            }
        }
        let alphabet = match &inputs {
            Inputs::Sequences(s) => Some(infer_alphabet(s)),
            Inputs::Dense(_) => None,
        };
        let feature_names = match &inputs {
            Inputs::Dense(x) => (0..x.ncols()).map(|j| format!("x{j}")).collect(),
            Inputs::Sequences(_) => Vec::new(),
        };
        Ok(Self {
            inputs,
            targets,
            feature_names,
            alphabet,
            standardizer: None,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> TaskKind {
        self.targets.task()
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Class { classes, .. } => Some(classes.len()),
            Targets::Real(_) => None,
        }
    }

    pub fn input_dim(&self) -> Option<usize> {
        match &self.inputs {
            Inputs::Dense(x) => Some(x.ncols()),
            Inputs::Sequences(_) => None,
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(idx),
            targets: self.targets.select(idx),
            feature_names: self.feature_names.clone(),
            alphabet: self.alphabet.clone(),
            standardizer: self.standardizer.clone(),
        }
    }

    /// Fit a standardizer on these inputs and apply it in place.
    pub fn standardize(&mut self) -> Result<&Standardizer> {
        let Inputs::Dense(x) = &mut self.inputs else {
            return Err(Error::Input("only tabular inputs can be standardized".into()));
        };
        let s = Standardizer::fit(x);
        s.apply(x)?;
        Ok(self.standardizer.insert(s))
    }

    /// Apply a transform fitted elsewhere (typically on the training split).
    pub fn apply_standardizer(&mut self, s: &Standardizer) -> Result<()> {
        let Inputs::Dense(x) = &mut self.inputs else {
            return Err(Error::Input("only tabular inputs can be standardized".into()));
        };
        s.apply(x)?;
        self.standardizer = Some(s.clone());
        Ok(())
    }

    /// Re-index class labels against a reference class list (e.g. the
    /// training set's), so index `i` means `classes[i]` in both.
    pub fn relabel(&mut self, classes: &[String]) -> Result<()> {
        let Targets::Class { labels, classes: own } = &mut self.targets else {
            return Err(Error::Compatibility("regression targets have no class labels".into()));
        };
        let mut mapped = Vec::with_capacity(labels.len());
        for &l in labels.iter() {
            let name = &own[l];
            let idx = classes
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::Input(format!("label {name:?} was not seen in training")))?;
            mapped.push(idx);
        }
        *labels = mapped;
        *own = classes.to_vec();
        Ok(())
    }
}

fn infer_alphabet(seqs: &[Vec<u8>]) -> Vec<u8> {
    let set: BTreeSet<u8> = seqs.iter().flatten().copied().collect();
    set.into_iter().collect()
}

/// Index labels: integers `0..K` map to themselves, anything else by first appearance.
fn index_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let ints: Option<Vec<usize>> = raw.iter().map(|s| s.trim().parse::<usize>().ok()).collect();
    if let Some(ints) = ints {
        let k = ints.iter().max().map_or(0, |m| m + 1);
        return (ints, (0..k).map(|i| i.to_string()).collect());
    }
    let mut classes: Vec<String> = Vec::new();
    let labels = raw
        .iter()
        .map(|s| match classes.iter().position(|c| c == s) {
            Some(i) => i,
            None => {
                classes.push(s.clone());
                classes.len() - 1
            }
        })
        .collect();
    (labels, classes)
}

/// Read a comma-separated file with a header row. `label_column` names the
/// target; every other column must be numeric.
pub fn load_tabular(path: &Path, label_column: &str, task: TaskKind, standardize: bool) -> Result<Dataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(0, e.to_string()))?;
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| parse_err(1, format!("missing label column {label_column:?}")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut rows: Vec<f64> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != headers.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        for (i, cell) in record.iter().enumerate() {
            if i == label_idx {
                raw_labels.push(cell.to_string());
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| parse_err(line, format!("non-numeric value {cell:?} in column {:?}", &headers[i])))?;
                rows.push(v);
            }
        }
    }
    if raw_labels.is_empty() {
        return Err(parse_err(1, "dataset has no rows".into()));
    }
    let n = raw_labels.len();
    let x = DMatrix::from_row_slice(n, feature_names.len(), &rows);
    let targets = match task {
        TaskKind::Regression => {
            let mut ys = Vec::with_capacity(n);
            for (i, s) in raw_labels.iter().enumerate() {
                ys.push(
                    s.parse::<f64>()
                        .map_err(|_| parse_err(i + 2, format!("non-numeric target {s:?}")))?,
                );
            }
            Targets::Real(ys)
        }
        TaskKind::Classification => {
            let (labels, classes) = index_labels(&raw_labels);
            Targets::Class { labels, classes }
        }
    };
    let mut ds = Dataset::new(Inputs::Dense(x), targets)?;
    ds.feature_names = feature_names;
    if standardize {
        ds.standardize()?;
    }
    Ok(ds)
}

/// Write a tabular dataset in the format [`load_tabular`] reads, label column last.
pub fn write_tabular(ds: &Dataset, path: &Path, label_column: &str) -> Result<()> {
    let Inputs::Dense(x) = &ds.inputs else {
        return Err(Error::Input("only tabular datasets can be written as CSV".into()));
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    let mut header = ds.feature_names.clone();
    header.push(label_column.to_string());
    w.write_record(&header).map_err(|e| Error::Io(e.into()))?;
    for i in 0..x.nrows() {
        let mut rec: Vec<String> = x.row(i).iter().map(|v| format!("{v:?}")).collect();
        rec.push(match ds.targets.get(i) {
            Target::Real(y) => format!("{y:?}"),
            Target::Class(c) => match &ds.targets {
                Targets::Class { classes, .. } => classes[c].clone(),
                Targets::Real(_) => unreachable!(),
            },
        });
        w.write_record(&rec).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

/// Read `label<TAB>sequence` lines. Labels are indexed as in [`load_tabular`].
pub fn load_sequences(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut raw_labels = Vec::new();
    let mut seqs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: message.to_string(),
        };
        let (label, seq) = line.split_once('\t').ok_or_else(|| err("missing tab between label and sequence"))?;
        if seq.is_empty() {
            return Err(err("empty sequence"));
        }
        raw_labels.push(label.to_string());
        seqs.push(seq.as_bytes().to_vec());
    }
    if seqs.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "dataset has no rows".into(),
        });
    }
    let (labels, classes) = index_labels(&raw_labels);
    Dataset::new(Inputs::Sequences(seqs), Targets::Class { labels, classes })
}

/// Write sequences as `label<TAB>sequence` lines.
pub fn write_sequences(ds: &Dataset, path: &Path) -> Result<()> {
    let (Inputs::Sequences(seqs), Targets::Class { labels, classes }) = (&ds.inputs, &ds.targets) else {
        return Err(Error::Input("not a sequence classification dataset".into()));
    };
    let mut out = String::new();
    for (s, &l) in seqs.iter().zip(labels) {
        out.push_str(&classes[l]);
        out.push('\t');
        out.push_str(&String::from_utf8_lossy(s));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Deterministic random split into train and test parts.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let n = ds.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} on {n} rows leaves an empty split"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(&[seed, tag::SPLIT]));
    let (a, b) = perm.split_at(n_train);
    Ok((ds.subset(a), ds.subset(b)))
}

/// Indices of one mini-batch, drawn uniformly without replacement.
pub fn batch_indices(n: usize, batch: usize, seed: u64, epoch: usize, step: usize) -> Vec<usize> {
    let batch = batch.min(n);
    let mut rng = stream(&[seed, tag::BATCH, epoch as u64, step as u64]);
    index::sample(&mut rng, n, batch).into_vec()
}

/// All mini-batches of one epoch: `⌈N / batch⌉` independent uniform draws.
pub fn batch_iter(ds: &Dataset, batch: usize, seed: u64, epoch: usize) -> impl Iterator<Item = Vec<usize>> {
    let n = ds.len();
    let steps = n.div_ceil(batch.max(1));
    (0..steps).map(move |step| batch_indices(n, batch, seed, epoch, step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn two_point_standardization() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "x,y\n0,1.5\n2,2.5\n");
        let ds = load_tabular(&p, "y", TaskKind::Regression, true).unwrap();
        let Inputs::Dense(x) = &ds.inputs else { panic!() };
        assert_eq!(x.as_slice(), &[-1.0, 1.0]);
        assert_eq!(ds.targets, Targets::Real(vec![1.5, 2.5]));
    }

    #[test]
    fn header_only_is_empty_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "x,y\n");
        let err = load_tabular(&p, "y", TaskKind::Regression, false).unwrap_err();
        assert!(err.to_string().contains("no rows"));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "x,y\n1,2\nfoo,3\n");
        match load_tabular(&p, "y", TaskKind::Regression, false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let p = write(&dir, "b.csv", "x,y\n1,2\n3\n");
        assert!(matches!(load_tabular(&p, "y", TaskKind::Regression, false), Err(Error::Parse { .. })));
        let p = write(&dir, "c.csv", "x,z\n1,2\n");
        assert!(matches!(load_tabular(&p, "y", TaskKind::Regression, false), Err(Error::Parse { .. })));
    }

    #[test]
    fn tabular_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "a,label,b\n0.1,cat,3\n-2.5e-3,dog,4.25\n7,cat,0\n");
        let ds = load_tabular(&p, "label", TaskKind::Classification, false).unwrap();
        assert_eq!(ds.feature_names, vec!["a", "b"]);
        let q = dir.path().join("b.csv");
        write_tabular(&ds, &q, "label").unwrap();
        let again = load_tabular(&q, "label", TaskKind::Classification, false).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn integer_labels_keep_their_value() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "x,y\n0,2\n1,0\n");
        let ds = load_tabular(&p, "y", TaskKind::Classification, false).unwrap();
        assert_eq!(
            ds.targets,
            Targets::Class {
                labels: vec![2, 0],
                classes: vec!["0".into(), "1".into(), "2".into()]
            }
        );
    }

    #[test]
    fn standardized_columns() {
        let x = DMatrix::from_fn(50, 3, |i, j| if j == 2 { 4.0 } else { (i * (j + 3)) as f64 * 0.37 - 1.0 });
        let mut ds = Dataset::new(Inputs::Dense(x), Targets::Real(vec![0.0; 50])).unwrap();
        let s = ds.standardize().unwrap().clone();
        assert_eq!(s.constant_columns, vec![2]);
        let Inputs::Dense(x) = &ds.inputs else { panic!() };
        for j in 0..2 {
            let col = x.column(j);
            let mean = col.sum() / 50.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() <= 1e-10);
            assert!((var - 1.0).abs() <= 1e-10);
        }
        assert!(x.column(2).iter().all(|v| *v == 4.0));
    }

    #[test]
    fn sequences() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "s.tsv", "a\tXYX\nb\tYY\na\tZ\n");
        let ds = load_sequences(&p).unwrap();
        let Targets::Class { labels, classes } = &ds.targets else { panic!() };
        assert_eq!(classes.len(), 2);
        assert_eq!(labels, &vec![0, 1, 0]);
        let Inputs::Sequences(s) = &ds.inputs else { panic!() };
        assert_eq!(s[0].len(), 3);
        assert_eq!(s[1].len(), 2);
        let present: BTreeSet<u8> = s.iter().flatten().copied().collect();
        assert_eq!(ds.alphabet.as_deref().unwrap(), present.into_iter().collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn sequence_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "s.tsv", "a\tXY\nb YY\n");
        assert!(matches!(load_sequences(&p), Err(Error::Parse { line: 2, .. })));
        let p = write(&dir, "t.tsv", "a\t\n");
        assert!(matches!(load_sequences(&p), Err(Error::Parse { line: 1, .. })));
    }

    fn toy(n: usize) -> Dataset {
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64);
        Dataset::new(Inputs::Dense(x), Targets::Real((0..n).map(|i| i as f64).collect())).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = toy(10);
        let (a, b) = split(&ds, 0.5, 3).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        let (a2, _) = split(&ds, 0.5, 3).unwrap();
        assert_eq!(a, a2);
        let ids = |d: &Dataset| match &d.targets {
            Targets::Real(v) => v.iter().map(|x| *x as usize).collect::<BTreeSet<_>>(),
            _ => unreachable!(),
        };
        let (ia, ib) = (ids(&a), ids(&b));
        assert!(ia.is_disjoint(&ib));
        assert_eq!(ia.union(&ib).count(), 10);
        assert!(split(&ds, 0.01, 0).is_err());
        assert!(split(&ds, 1.0, 0).is_err());
    }

    #[test]
    fn batches_are_reproducible() {
        let ds = toy(10);
        let a: Vec<_> = batch_iter(&ds, 3, 1, 2).collect();
        let b: Vec<_> = batch_iter(&ds, 3, 1, 2).collect();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        for batch in &a {
            let set: BTreeSet<_> = batch.iter().collect();
            assert_eq!(set.len(), 3);
            assert!(batch.iter().all(|&i| i < 10));
        }
    }

    #[test]
    fn relabel_against_training_classes() {
        let mut ds = Dataset::new(
            Inputs::Sequences(vec![b"A".to_vec(), b"C".to_vec()]),
            Targets::Class {
                labels: vec![0, 1],
                classes: vec!["neg".into(), "pos".into()],
            },
        )
        .unwrap();
        ds.relabel(&["pos".to_string(), "neg".to_string()]).unwrap();
        assert_eq!(
            ds.targets,
            Targets::Class {
                labels: vec![1, 0],
                classes: vec!["pos".into(), "neg".into()]
            }
        );
        assert!(ds.relabel(&["x".to_string()]).is_err());
    }
}
