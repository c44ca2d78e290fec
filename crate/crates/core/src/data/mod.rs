//! Datasets: the on-disk text format, feature preprocessing, public splits
//! and synthetic graphs.

mod io;
mod synthetic;

pub use io::{load_dataset, save_dataset};
pub use synthetic::{generate_sbm, random_connected_graph, SyntheticSpec};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph_ops::Graph;
use crate::linalg::DenseMatrix;

/// Disjoint, sorted node index sets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn validate(&self, node_count: usize) -> Result<()> {
        let mut owner = vec![None; node_count];
        for (name, set) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &i in set {
                if i >= node_count {
                    return Err(Error::InvalidDataset(format!(
                        "{name} split references node {i} of {node_count}"
                    )));
                }
                if let Some(prev) = owner[i].replace(name) {
                    return Err(Error::InvalidDataset(format!(
                        "node {i} appears in both {prev} and {name} splits"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    /// One-hot rows of `labels`.
    pub targets: DenseMatrix,
    pub num_classes: usize,
    pub splits: Splits,
}

impl Dataset {
    pub fn new(
        graph: Graph,
        features: DenseMatrix,
        labels: Vec<usize>,
        num_classes: usize,
        splits: Splits,
    ) -> Result<Self> {
        let n = graph.node_count();
        if features.rows() != n || labels.len() != n {
            return Err(Error::InvalidDataset(format!(
                "graph has {n} nodes, features {} rows, labels {} entries",
                features.rows(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::InvalidDataset("no classes".into()));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::InvalidDataset(format!(
                "node {i} has label {l}, outside 0..{num_classes}"
            )));
        }
        if !features.is_finite() {
            return Err(Error::InvalidDataset("features contain non-finite values".into()));
        }
        splits.validate(n)?;
        let targets = one_hot(&labels, num_classes);
        Ok(Self {
            graph,
            features,
            labels,
            targets,
            num_classes,
            splits,
        })
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Same dataset with row-normalized features.
    pub fn row_normalized(mut self) -> Self {
        self.features = row_normalize_features(&self.features);
        self
    }
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> DenseMatrix {
    DenseMatrix::from_fn(labels.len(), num_classes, |i, j| {
        if labels[i] == j {
            1.0
        } else {
            0.0
        }
    })
}

/// Divides each nonzero row by its L1 norm.
pub fn row_normalize_features(x: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let l1: f64 = row.iter().map(|v| v.abs()).sum();
        if l1 > 0.0 {
            row.iter_mut().for_each(|v| *v /= l1);
        }
    }
    out
}

/// Training set = the first `per_class` nodes of each class in node order;
/// validation and test sets are drawn from the rest by a seeded shuffle.
pub fn make_public_split(
    labels: &[usize],
    num_classes: usize,
    per_class: usize,
    val_size: usize,
    test_size: usize,
    seed: u64,
) -> Result<Splits> {
    let mut taken = vec![0usize; num_classes];
    let mut train = Vec::with_capacity(per_class * num_classes);
    let mut rest = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::InvalidDataset(format!(
                "node {i} has label {l}, outside 0..{num_classes}"
            )));
        }
        if taken[l] < per_class {
            taken[l] += 1;
            train.push(i);
        } else {
            rest.push(i);
        }
    }
    if let Some((c, &k)) = taken.iter().enumerate().find(|(_, &k)| k < per_class) {
        return Err(Error::InvalidDataset(format!(
            "class {c} has {k} members, fewer than {per_class}"
        )));
    }
    if val_size + test_size > rest.len() {
        return Err(Error::InvalidDataset(format!(
            "{} nodes remain after training, cannot draw {val_size} validation and {test_size} test",
            rest.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rest.shuffle(&mut rng);
    let mut val = rest[..val_size].to_vec();
    let mut test = rest[val_size..val_size + test_size].to_vec();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Splits { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_dir() -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny")
    }

    #[test]
    fn loads_tiny_fixture() {
        let d = load_dataset(fixture_dir()).unwrap();
        assert_eq!(d.node_count(), 6);
        assert_eq!(d.num_classes, 2);
        assert_eq!(d.graph.edge_count(), 7);
        assert_eq!(d.splits.train, vec![0, 3]);
        assert_eq!(d.feature_dim(), 4);
        assert_eq!(d.labels, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(d.features.row(1), &[0.0, 2.0, 0.0, 0.5]);
        assert_eq!(d.features.row(4), &[0.0, 0.0, 3.0, 1.0]);
        for i in 0..6 {
            assert_eq!(d.targets.get(i, d.labels[i]), 1.0);
            assert_eq!(d.targets.row(i).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn row_normalization_examples() {
        let x = DenseMatrix::from_rows(&[[1.0, 1.0, 2.0], [0.0, 0.0, 0.0], [3.0, 0.0, 1.0]]);
        let y = row_normalize_features(&x);
        assert_eq!(y.row(0), &[0.25, 0.25, 0.5]);
        assert_eq!(y.row(1), &[0.0, 0.0, 0.0]);
        for i in 0..3 {
            let s: f64 = y.row(i).iter().sum();
            assert!(s.abs() < 1e-12 || (s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn public_split_takes_first_per_class() {
        let labels: Vec<usize> = (0..700).map(|i| (i * 3) % 7).collect();
        let s = make_public_split(&labels, 7, 20, 200, 300, 1).unwrap();
        assert_eq!(s.train.len(), 140);
        for c in 0..7 {
            let mine: Vec<usize> = s.train.iter().copied().filter(|&i| labels[i] == c).collect();
            let first: Vec<usize> = (0..700).filter(|&i| labels[i] == c).take(20).collect();
            assert_eq!(mine, first);
        }
        s.validate(700).unwrap();
        assert_eq!((s.val.len(), s.test.len()), (200, 300));
        assert_eq!(s, make_public_split(&labels, 7, 20, 200, 300, 1).unwrap());
        assert_ne!(s, make_public_split(&labels, 7, 20, 200, 300, 2).unwrap());
    }

    #[test]
    fn public_split_on_two_classes() {
        let labels = vec![0, 0, 0, 1, 1, 1];
        let s = make_public_split(&labels, 2, 1, 2, 2, 0).unwrap();
        assert_eq!(s.train, vec![0, 3]);
        s.validate(6).unwrap();
    }

    #[test]
    fn public_split_errors() {
        let labels = vec![0, 0, 1];
        assert!(make_public_split(&labels, 2, 2, 0, 0, 0).is_err());
        assert!(make_public_split(&labels, 2, 1, 1, 1, 0).is_err());
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let s = Splits {
            train: vec![0, 1],
            val: vec![2],
            test: vec![1],
        };
        let err = s.validate(3).unwrap_err().to_string();
        assert!(err.contains("node 1"), "{err}");
    }
}
