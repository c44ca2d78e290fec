//! Plain-text dataset directory: `edges.txt`, `features.txt`, `labels.txt`
//! and `splits.txt`. Text after `#` is a comment, except for the header
//! directives `# features: <F>` and `# classes: <C>`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph_ops::Graph;
use crate::linalg::DenseMatrix;

use super::{Dataset, Splits};

struct Line<'a> {
    number: usize,
    fields: Vec<&'a str>,
}

struct TextFile {
    path: PathBuf,
    text: String,
}

impl TextFile {
    fn read(dir: &Path, name: &str) -> Result<Self> {
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, text })
    }

    fn lines(&self) -> impl Iterator<Item = Line<'_>> {
        self.text.lines().enumerate().filter_map(|(k, raw)| {
            let body = raw.split('#').next().unwrap_or("");
            let fields: Vec<&str> = body.split_whitespace().collect();
            (!fields.is_empty()).then_some(Line {
                number: k + 1,
                fields,
            })
        })
    }

    /// Value of a `# key: value` directive.
    fn directive(&self, key: &str) -> Result<Option<usize>> {
        for (k, raw) in self.text.lines().enumerate() {
            let Some(comment) = raw.trim_start().strip_prefix('#') else {
                continue;
            };
            if let Some((name, value)) = comment.split_once(':') {
                if name.trim() == key {
                    let v = value
                        .trim()
                        .parse()
                        .map_err(|_| self.err(k + 1, format!("bad {key} directive {:?}", value.trim())))?;
                    return Ok(Some(v));
                }
            }
        }
        Ok(None)
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::parse(&self.path, line, msg)
    }

    fn node(&self, line: &Line<'_>, field: usize, n: usize) -> Result<usize> {
        let raw = line.fields[field];
        let id: usize = raw
            .parse()
            .map_err(|_| self.err(line.number, format!("bad node id {raw:?}")))?;
        if id >= n {
            return Err(self.err(line.number, format!("node {id} outside 0..{n}")));
        }
        Ok(id)
    }
}

fn parse_value(file: &TextFile, line: usize, raw: &str) -> Result<f64> {
    let v: f64 = raw
        .parse()
        .map_err(|_| file.err(line, format!("bad number {raw:?}")))?;
    if !v.is_finite() {
        return Err(file.err(line, format!("non-finite value {raw:?}")));
    }
    Ok(v)
}

enum Row {
    Dense(Vec<f64>),
    Sparse(Vec<(usize, f64)>),
}

fn read_features(file: &TextFile) -> Result<DenseMatrix> {
    let mut rows: Vec<(usize, usize, Row)> = Vec::new();
    let mut dim = file.directive("features")?;
    let mut inferred = 0usize;
    for line in file.lines() {
        let node: usize = line.fields[0]
            .parse()
            .map_err(|_| file.err(line.number, format!("bad node id {:?}", line.fields[0])))?;
        let rest = &line.fields[1..];
        let row = if rest.is_empty() || rest.iter().any(|f| f.contains(':')) {
            let mut entries = Vec::with_capacity(rest.len());
            for f in rest {
                let (idx, val) = f
                    .split_once(':')
                    .ok_or_else(|| file.err(line.number, format!("mixed dense and sparse field {f:?}")))?;
                let idx: usize = idx
                    .parse()
                    .map_err(|_| file.err(line.number, format!("bad feature index {idx:?}")))?;
                entries.push((idx, parse_value(file, line.number, val)?));
                inferred = inferred.max(idx + 1);
            }
            Row::Sparse(entries)
        } else {
            let values = rest
                .iter()
                .map(|f| parse_value(file, line.number, f))
                .collect::<Result<Vec<_>>>()?;
            match dim {
                Some(d) if d != values.len() => {
                    return Err(file.err(
                        line.number,
                        format!("dense row has {} values, expected {d}", values.len()),
                    ))
                }
                None => dim = Some(values.len()),
                _ => {}
            }
            Row::Dense(values)
        };
        rows.push((line.number, node, row));
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::InvalidDataset(format!("{} has no rows", file.path.display())));
    }
    let dim = dim.unwrap_or(inferred);
    if inferred > dim {
        return Err(Error::InvalidDataset(format!(
            "{}: sparse index {} exceeds feature dimension {dim}",
            file.path.display(),
            inferred - 1
        )));
    }
    let mut x = DenseMatrix::zeros(n, dim);
    let mut seen = vec![false; n];
    for (number, node, row) in rows {
        if node >= n {
            return Err(file.err(number, format!("node {node} outside 0..{n}")));
        }
        if std::mem::replace(&mut seen[node], true) {
            return Err(file.err(number, format!("node {node} listed twice")));
        }
        let out = x.row_mut(node);
        match row {
            Row::Dense(values) => out.copy_from_slice(&values),
            Row::Sparse(entries) => {
                for (idx, v) in entries {
                    out[idx] = v;
                }
            }
        }
    }
    Ok(x)
}

fn read_labels(file: &TextFile, n: usize) -> Result<(Vec<usize>, usize)> {
    let declared = file.directive("classes")?;
    let mut labels = vec![None; n];
    for line in file.lines() {
        if line.fields.len() != 2 {
            return Err(file.err(line.number, "expected `<node> <class>`"));
        }
        let node = file.node(&line, 0, n)?;
        let class: usize = line.fields[1]
            .parse()
            .map_err(|_| file.err(line.number, format!("bad class {:?}", line.fields[1])))?;
        if let Some(c) = declared {
            if class >= c {
                return Err(file.err(line.number, format!("label {class} out of range 0..{c}")));
            }
        }
        if labels[node].replace(class).is_some() {
            return Err(file.err(line.number, format!("node {node} labeled twice")));
        }
    }
    let labels = labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::InvalidDataset(format!("node {i} has no label"))))
        .collect::<Result<Vec<_>>>()?;
    let classes = declared.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Ok((labels, classes))
}

fn read_splits(file: &TextFile, n: usize) -> Result<Splits> {
    let mut owner: Vec<Option<&str>> = vec![None; n];
    let mut splits = Splits::default();
    for line in file.lines() {
        if line.fields.len() != 2 {
            return Err(file.err(line.number, "expected `<node> <train|val|test>`"));
        }
        let node = file.node(&line, 0, n)?;
        let name = line.fields[1];
        let set = match name {
            "train" => &mut splits.train,
            "val" => &mut splits.val,
            "test" => &mut splits.test,
            other => return Err(file.err(line.number, format!("unknown split {other:?}"))),
        };
        if let Some(prev) = owner[node].replace(name) {
            return Err(file.err(
                line.number,
                format!("node {node} already assigned to {prev}"),
            ));
        }
        set.push(node);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    Ok(splits)
}

fn read_edges(file: &TextFile, n: usize) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for line in file.lines() {
        if line.fields.len() != 2 {
            return Err(file.err(line.number, "expected `<u> <v>`"));
        }
        let u = file.node(&line, 0, n)?;
        let v = file.node(&line, 1, n)?;
        if u != v {
            edges.push((u, v));
        }
    }
    Ok(edges)
}

/// Reads a dataset directory. The node count is the number of feature rows;
/// raw self-loops are dropped.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let features = TextFile::read(dir, "features.txt")?;
    let labels = TextFile::read(dir, "labels.txt")?;
    let edges = TextFile::read(dir, "edges.txt")?;
    let splits = TextFile::read(dir, "splits.txt")?;

    let x = read_features(&features)?;
    let n = x.rows();
    let (labels, classes) = read_labels(&labels, n)?;
    let graph = Graph::new(n, read_edges(&edges, n)?)?;
    let splits = read_splits(&splits, n)?;
    Dataset::new(graph, x, labels, classes, splits)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Writes `dataset` in the format [`load_dataset`] reads. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut edges = String::new();
    for &(u, v) in dataset.graph.edges() {
        writeln!(edges, "{u} {v}").unwrap();
    }
    write(dir, "edges.txt", &edges)?;

    let mut features = format!("# features: {}\n", dataset.feature_dim());
    for i in 0..dataset.node_count() {
        write!(features, "{i}").unwrap();
        for (j, &v) in dataset.features.row(i).iter().enumerate() {
            if v != 0.0 {
                write!(features, " {j}:{v:?}").unwrap();
            }
        }
        features.push('\n');
    }
    write(dir, "features.txt", &features)?;

    let mut labels = format!("# classes: {}\n", dataset.num_classes);
    for (i, l) in dataset.labels.iter().enumerate() {
        writeln!(labels, "{i} {l}").unwrap();
    }
    write(dir, "labels.txt", &labels)?;

    let mut splits = String::new();
    for (name, set) in [
        ("train", &dataset.splits.train),
        ("val", &dataset.splits.val),
        ("test", &dataset.splits.test),
    ] {
        for i in set {
            writeln!(splits, "{i} {name}").unwrap();
        }
    }
    write(dir, "splits.txt", &splits)
}
