//! Seeded synthetic graphs for desk-scale runs.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph_ops::Graph;
use crate::linalg::DenseMatrix;

use super::{make_public_split, Dataset};

/// Stochastic block model with a public-style split.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub seed: u64,
    pub train_per_class: usize,
    pub val_size: usize,
    pub test_size: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            blocks: 2,
            nodes_per_block: 20,
            p_in: 0.3,
            p_out: 0.02,
            feature_dim: 8,
            seed: 0,
            train_per_class: 5,
            val_size: 10,
            test_size: 20,
        }
    }
}

impl SyntheticSpec {
    pub fn node_count(&self) -> usize {
        self.blocks * self.nodes_per_block
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.blocks == 0 || self.nodes_per_block == 0 {
            return bad("SBM needs at least one block and one node per block".into());
        }
        if !(0.0 <= self.p_out && self.p_out <= self.p_in && self.p_in <= 1.0) {
            return bad(format!(
                "SBM probabilities need 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            ));
        }
        if self.feature_dim < self.blocks {
            return bad(format!(
                "feature_dim {} cannot hold a one-hot code for {} blocks",
                self.feature_dim, self.blocks
            ));
        }
        Ok(())
    }
}

impl fmt::Display for SyntheticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "blocks={},nodes={},p_in={},p_out={},dim={},seed={},train={},val={},test={}",
            self.blocks,
            self.nodes_per_block,
            self.p_in,
            self.p_out,
            self.feature_dim,
            self.seed,
            self.train_per_class,
            self.val_size,
            self.test_size
        )
    }
}

impl FromStr for SyntheticSpec {
    type Err = Error;

    /// Comma-separated `key=value` pairs over the defaults, e.g.
    /// `blocks=3,nodes=50,p_in=0.2`.
    fn from_str(s: &str) -> Result<Self> {
        let mut spec = SyntheticSpec::default();
        for pair in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got {pair:?}")))?;
            let value = value.trim();
            let bad = || Error::InvalidConfig(format!("bad value {value:?} for SBM key {key:?}"));
            match key.trim() {
                "blocks" => spec.blocks = value.parse().map_err(|_| bad())?,
                "nodes" => spec.nodes_per_block = value.parse().map_err(|_| bad())?,
                "p_in" => spec.p_in = value.parse().map_err(|_| bad())?,
                "p_out" => spec.p_out = value.parse().map_err(|_| bad())?,
                "dim" => spec.feature_dim = value.parse().map_err(|_| bad())?,
                "seed" => spec.seed = value.parse().map_err(|_| bad())?,
                "train" => spec.train_per_class = value.parse().map_err(|_| bad())?,
                "val" => spec.val_size = value.parse().map_err(|_| bad())?,
                "test" => spec.test_size = value.parse().map_err(|_| bad())?,
                other => return Err(Error::InvalidConfig(format!("unknown SBM key {other:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Node `i` belongs to block `i / nodes_per_block`. A cycle through all nodes
/// in index order keeps the graph connected. Features are the one-hot block
/// code plus N(0, 0.5²) noise.
pub fn generate_sbm(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.node_count();
    let block = |i: usize| i / spec.nodes_per_block;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if block(i) == block(j) { spec.p_in } else { spec.p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    if n > 1 {
        edges.extend((0..n).map(|i| (i, (i + 1) % n)));
    }
    let graph = Graph::new(n, edges)?;

    let noise = Normal::new(0.0, 0.5).expect("valid sigma");
    let features = DenseMatrix::from_fn(n, spec.feature_dim, |i, j| {
        let code = if j == block(i) { 1.0 } else { 0.0 };
        code + noise.sample(&mut rng)
    });
    let labels: Vec<usize> = (0..n).map(block).collect();
    let splits = make_public_split(
        &labels,
        spec.blocks,
        spec.train_per_class,
        spec.val_size,
        spec.test_size,
        spec.seed,
    )?;
    Dataset::new(graph, features, labels, spec.blocks, splits)
}

/// Random spanning tree over a shuffled node order plus independent extra
/// edges with probability `extra_edge_prob`.
pub fn random_connected_graph<R: Rng>(n: usize, extra_edge_prob: f64, rng: &mut R) -> Result<Graph> {
    if n == 0 {
        return Err(Error::InvalidGraph("graph needs at least one node".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::with_capacity(2 * n);
    for k in 1..n {
        let parent = order[rng.random_range(0..k)];
        edges.push((parent, order[k]));
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < extra_edge_prob {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, edges)
}
