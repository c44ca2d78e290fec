//! Graph operators: Laplacians, the renormalized affinity `Â`, its
//! spectra-shifted form `Â_r = rI + Â`, graph Fourier utilities and the
//! energy-loss check for `ReLU(Â ·)`.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{relu, symmetric_eigen, DenseMatrix, DenseVector, SparseSymMatrix};

/// Immutable undirected graph. Edges are stored once as `(u, v)` with `u <= v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    degrees: Vec<usize>,
    components: usize,
}

impl Graph {
    /// Builds a graph, symmetrizing and deduplicating the edge list.
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidGraph("graph needs at least one node".into()));
        }
        let mut canon = Vec::new();
        for (u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) references a node outside 0..{node_count}"
                )));
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        canon.dedup();

        let mut degrees = vec![0usize; node_count];
        for &(u, v) in &canon {
            degrees[u] += 1;
            if u != v {
                degrees[v] += 1;
            }
        }
        let components = count_components(node_count, &canon);
        Ok(Self {
            node_count,
            edges: canon,
            degrees,
            components,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Row sums of the adjacency matrix (a self-loop contributes 1).
    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn component_count(&self) -> usize {
        self.components
    }

    pub fn is_connected(&self) -> bool {
        self.components == 1
    }

    pub fn adjacency(&self) -> SparseSymMatrix {
        let entries: Vec<_> = self.edges.iter().map(|&(u, v)| (u, v, 1.0)).collect();
        SparseSymMatrix::from_upper_triplets(self.node_count, &entries).expect("canonical edges")
    }
}

fn count_components(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut components = n;
    for &(u, v) in edges {
        let (a, b) = (find(&mut parent, u), find(&mut parent, v));
        if a != b {
            parent[a] = b;
            components -= 1;
        }
    }
    components
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Laplacian,
    SymLaplacian,
    RenormAffinity,
    TrAffinity,
}

impl OperatorKind {
    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Laplacian => "laplacian",
            OperatorKind::SymLaplacian => "sym_laplacian",
            OperatorKind::RenormAffinity => "renorm_affinity",
            OperatorKind::TrAffinity => "tr_affinity",
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A symmetric graph operator together with its kind and spectral shift.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    matrix: SparseSymMatrix,
    kind: OperatorKind,
    shift: f64,
}

impl Operator {
    pub fn matrix(&self) -> &SparseSymMatrix {
        &self.matrix
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    fn expect_kind(&self, expected: OperatorKind) -> Result<()> {
        if self.kind != expected {
            return Err(Error::WrongOperatorKind {
                expected: expected.name(),
                found: self.kind.name(),
            });
        }
        Ok(())
    }
}

/// Combinatorial Laplacian `L = D - A`.
pub fn build_laplacian(g: &Graph) -> Operator {
    let a = g.adjacency();
    let mut entries = Vec::new();
    for i in 0..g.node_count() {
        let (cols, vals) = a.row(i);
        let mut diag = g.degrees()[i] as f64;
        for (&j, &v) in cols.iter().zip(vals) {
            if j == i {
                diag -= v;
            } else {
                entries.push((i, j, -v));
            }
        }
        entries.push((i, i, diag));
    }
    Operator {
        matrix: SparseSymMatrix::from_triplets(g.node_count(), entries).expect("symmetric"),
        kind: OperatorKind::Laplacian,
        shift: 0.0,
    }
}

/// `L_sym = I - D^{-1/2} A D^{-1/2}`; isolated nodes keep a unit diagonal.
pub fn build_sym_laplacian(g: &Graph) -> Operator {
    let a = g.adjacency();
    let inv_sqrt: Vec<f64> = g
        .degrees()
        .iter()
        .map(|&d| if d > 0 { 1.0 / (d as f64).sqrt() } else { 0.0 })
        .collect();
    let mut entries = Vec::new();
    for i in 0..g.node_count() {
        let (cols, vals) = a.row(i);
        let mut diag = 1.0;
        for (&j, &v) in cols.iter().zip(vals) {
            let w = v * (inv_sqrt[i] * inv_sqrt[j]);
            if j == i {
                diag -= w;
            } else {
                entries.push((i, j, -w));
            }
        }
        entries.push((i, i, diag));
    }
    Operator {
        matrix: SparseSymMatrix::from_triplets(g.node_count(), entries).expect("symmetric"),
        kind: OperatorKind::SymLaplacian,
        shift: 0.0,
    }
}

/// Renormalized degrees `D̃_ii = Σ_j (A + I)_ij`.
pub fn renormalized_degrees(g: &Graph) -> Vec<f64> {
    g.degrees().iter().map(|&d| d as f64 + 1.0).collect()
}

/// `Â = D̃^{-1/2} (A + I) D̃^{-1/2}`.
pub fn build_renormalized_affinity(g: &Graph) -> Operator {
    let a = g.adjacency();
    let inv_sqrt: Vec<f64> = renormalized_degrees(g)
        .iter()
        .map(|d| 1.0 / d.sqrt())
        .collect();
    let mut entries = Vec::with_capacity(a.nnz() + g.node_count());
    for i in 0..g.node_count() {
        let (cols, vals) = a.row(i);
        let mut has_diag = false;
        for (&j, &v) in cols.iter().zip(vals) {
            let tilde = if j == i {
                has_diag = true;
                v + 1.0
            } else {
                v
            };
            entries.push((i, j, tilde * (inv_sqrt[i] * inv_sqrt[j])));
        }
        if !has_diag {
            entries.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
        }
    }
    Operator {
        matrix: SparseSymMatrix::from_triplets(g.node_count(), entries).expect("symmetric"),
        kind: OperatorKind::RenormAffinity,
        shift: 0.0,
    }
}

/// `Â_r = rI + Â`. Any real `r` is accepted, including shifts that push the
/// spectrum outside the unit interval.
pub fn apply_spectra_shift(op: &Operator, r: f64) -> Result<Operator> {
    op.expect_kind(OperatorKind::RenormAffinity)?;
    let matrix = if r == 0.0 {
        op.matrix.clone()
    } else {
        op.matrix.add_diagonal(r)
    };
    Ok(Operator {
        matrix,
        kind: OperatorKind::TrAffinity,
        shift: r,
    })
}

/// The propagation operator used by the model: `Â`, or `Â_r` when a
/// resolution is configured.
pub fn propagation_operator(g: &Graph, resolution: Option<f64>) -> Operator {
    let a_hat = build_renormalized_affinity(g);
    match resolution {
        Some(r) => apply_spectra_shift(&a_hat, r).expect("renormalized affinity"),
        None => a_hat,
    }
}

/// `v̂ = [√D̃_11, …, √D̃_NN]`, the eigenvector of `Â` for eigenvalue 1.
pub fn degree_root_vector(g: &Graph) -> DenseVector {
    DenseVector::new(renormalized_degrees(g).iter().map(|d| d.sqrt()).collect())
}

/// Orthonormal eigenvectors (columns of `vectors`) with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    pub vectors: DenseMatrix,
    pub values: Vec<f64>,
}

impl SpectralBasis {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn eigenvector(&self, i: usize) -> DenseVector {
        DenseVector::new(self.vectors.column(i))
    }
}

pub const DEFAULT_EIGEN_CAP: usize = 2000;

/// Dense eigendecomposition; refuses operators larger than `cap`.
pub fn eigendecompose(op: &Operator, cap: usize) -> Result<SpectralBasis> {
    if op.dim() > cap {
        return Err(Error::DiagnosticsOnly { dim: op.dim(), cap });
    }
    let (values, vectors) = symmetric_eigen(&op.matrix.to_dense())?;
    Ok(SpectralBasis { vectors, values })
}

/// `x_F = Uᵀ x`.
pub fn graph_fourier_transform(basis: &SpectralBasis, x: &DenseVector) -> Result<DenseVector> {
    let u = &basis.vectors;
    if u.rows() != x.len() {
        return Err(Error::ShapeMismatch {
            op: "graph_fourier_transform",
            left: u.shape(),
            right: (x.len(), 1),
        });
    }
    let mut out = vec![0.0; u.cols()];
    for (i, &xi) in x.as_slice().iter().enumerate() {
        out.iter_mut().zip(u.row(i)).for_each(|(o, &uij)| *o += uij * xi);
    }
    Ok(DenseVector::new(out))
}

/// `Σ x_i²`, equal to the spectral energy under any orthonormal basis.
pub fn signal_energy(x: &DenseVector) -> f64 {
    x.norm_squared()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyCheck {
    pub energy_in: f64,
    pub energy_out: f64,
    pub holds: bool,
}

/// Relative slack applied to the energy inequality.
pub const ENERGY_SLACK: f64 = 1e-12;

/// Compares the energy of `ReLU(Â x)` against that of `x`.
pub fn check_energy_loss(op: &Operator, x: &DenseVector) -> Result<EnergyCheck> {
    op.expect_kind(OperatorKind::RenormAffinity)?;
    if x.len() != op.dim() {
        return Err(Error::ShapeMismatch {
            op: "check_energy_loss",
            left: (op.dim(), op.dim()),
            right: (x.len(), 1),
        });
    }
    let ax = DenseMatrix::from_vec(op.dim(), 1, op.matrix.mul_vec(x.as_slice()))?;
    let out = relu(&ax);
    let energy_in = signal_energy(x);
    let energy_out = out.sum_of_squares();
    Ok(EnergyCheck {
        energy_in,
        energy_out,
        holds: energy_out <= energy_in + ENERGY_SLACK * energy_in.max(1.0),
    })
}

/// Whether `phi` preserves the energy of every probe signal to within `tol`
/// (relative).
pub fn is_energy_preserving(
    phi: impl Fn(&DenseVector) -> DenseVector,
    probes: &[DenseVector],
    tol: f64,
) -> bool {
    probes.iter().all(|x| {
        let e_in = signal_energy(x);
        let e_out = signal_energy(&phi(x));
        (e_out - e_in).abs() <= tol * e_in.max(f64::MIN_POSITIVE)
    })
}

/// Max over `i` of `|ûᵢᵀ(Â_r x) − (λᵢ + r)(ûᵢᵀ x)|`, where `basis`
/// decomposes the unshifted operator.
pub fn component_rescaling_check(
    op_r: &Operator,
    basis: &SpectralBasis,
    x: &DenseVector,
) -> Result<f64> {
    op_r.expect_kind(OperatorKind::TrAffinity)?;
    if basis.dim() != op_r.dim() || x.len() != op_r.dim() {
        return Err(Error::ShapeMismatch {
            op: "component_rescaling_check",
            left: (op_r.dim(), basis.dim()),
            right: (x.len(), 1),
        });
    }
    let shifted = DenseVector::new(op_r.matrix.mul_vec(x.as_slice()));
    let lhs = graph_fourier_transform(basis, &shifted)?;
    let xf = graph_fourier_transform(basis, x)?;
    let r = op_r.shift;
    Ok(lhs
        .as_slice()
        .iter()
        .zip(xf.as_slice())
        .zip(&basis.values)
        .map(|((&l, &c), &lambda)| (l - (lambda + r) * c).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_edge() -> Graph {
        Graph::new(2, [(0, 1)]).unwrap()
    }

    fn triangle() -> Graph {
        Graph::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn graph_canonicalizes_edges() {
        let g = Graph::new(3, [(1, 0), (0, 1), (2, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.degrees(), &[1, 2, 1]);
        assert!(g.is_connected());
        let h = Graph::new(4, [(0, 1)]).unwrap();
        assert_eq!(h.component_count(), 3);
        assert!(Graph::new(0, []).is_err());
        assert!(Graph::new(2, [(0, 2)]).is_err());
    }

    #[test]
    fn renormalized_affinity_examples() {
        let a = build_renormalized_affinity(&single_edge());
        let d = a.matrix().to_dense();
        for v in d.as_slice() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        let iso = build_renormalized_affinity(&Graph::new(1, []).unwrap());
        assert_eq!(iso.matrix().to_dense().as_slice(), &[1.0]);

        let k3 = build_renormalized_affinity(&triangle());
        for v in k3.matrix().to_dense().as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(k3.matrix().diagonal().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn self_loops_count_once_in_renormalization() {
        let g = Graph::new(2, [(0, 0), (0, 1)]).unwrap();
        let a = build_renormalized_affinity(&g).matrix().to_dense();
        // Ã = [[2,1],[1,1]], D̃ = diag(3, 2)
        assert!((a.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((a.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((a.get(1, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn laplacians_of_single_edge() {
        let l = build_laplacian(&single_edge()).matrix().to_dense();
        assert_eq!(l, DenseMatrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]));
        let ls = build_sym_laplacian(&single_edge()).matrix().to_dense();
        assert_eq!(ls, DenseMatrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]));
    }

    #[test]
    fn spectra_shift_examples() {
        let a = build_renormalized_affinity(&single_edge());
        let same = apply_spectra_shift(&a, 0.0).unwrap();
        assert_eq!(same.matrix(), a.matrix());
        assert_eq!(same.kind(), OperatorKind::TrAffinity);

        let shifted = apply_spectra_shift(&a, 1.0).unwrap();
        let want = DenseMatrix::from_rows(&[[1.5, 0.5], [0.5, 1.5]]);
        assert!(shifted.matrix().to_dense().max_abs_diff(&want) < 1e-15);
        let values = eigendecompose(&shifted, 10).unwrap().values;
        assert!((values[0] - 1.0).abs() < 1e-12 && (values[1] - 2.0).abs() < 1e-12);

        let k3 = apply_spectra_shift(&build_renormalized_affinity(&triangle()), -1.0).unwrap();
        let values = eigendecompose(&k3, 10).unwrap().values;
        for (got, want) in values.iter().zip([-1.0, -1.0, 0.0]) {
            assert!((got - want).abs() < 1e-12, "{values:?}");
        }

        assert!(apply_spectra_shift(&shifted, 1.0).is_err());
    }

    #[test]
    fn eigendecompose_examples() {
        let basis = eigendecompose(&build_renormalized_affinity(&single_edge()), 10).unwrap();
        assert!((basis.values[0]).abs() < 1e-12);
        assert!((basis.values[1] - 1.0).abs() < 1e-12);
        let top = basis.eigenvector(1);
        assert!((top.as_slice()[0].abs() - top.as_slice()[1].abs()).abs() < 1e-12);
        assert!(top.as_slice()[0] * top.as_slice()[1] > 0.0);

        let big = build_renormalized_affinity(&Graph::new(5, []).unwrap());
        assert!(matches!(
            eigendecompose(&big, 4),
            Err(Error::DiagnosticsOnly { dim: 5, cap: 4 })
        ));
    }

    #[test]
    fn fourier_transform_of_basis_vector_is_unit() {
        let basis = eigendecompose(&build_renormalized_affinity(&triangle()), 10).unwrap();
        for i in 0..3 {
            let xf = graph_fourier_transform(&basis, &basis.eigenvector(i)).unwrap();
            for (j, v) in xf.as_slice().iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-12);
            }
        }
        let zero = graph_fourier_transform(&basis, &DenseVector::zeros(3)).unwrap();
        assert_eq!(zero, DenseVector::zeros(3));
        assert!(graph_fourier_transform(&basis, &DenseVector::zeros(2)).is_err());
    }

    #[test]
    fn signal_energy_examples() {
        assert_eq!(signal_energy(&DenseVector::new(vec![3.0, 4.0])), 25.0);
        assert_eq!(signal_energy(&DenseVector::zeros(4)), 0.0);
    }

    #[test]
    fn energy_loss_equality_at_degree_root() {
        let g = Graph::new(5, [(0, 1), (1, 2), (2, 3), (3, 4), (1, 3)]).unwrap();
        let a = build_renormalized_affinity(&g);
        let v = degree_root_vector(&g);
        let check = check_energy_loss(&a, &v).unwrap();
        assert!(check.holds);
        assert!((check.energy_out - check.energy_in).abs() <= 1e-12 * check.energy_in);
    }

    #[test]
    fn energy_loss_requires_unshifted_operator() {
        let a = build_renormalized_affinity(&single_edge());
        let shifted = apply_spectra_shift(&a, 1.0).unwrap();
        assert!(check_energy_loss(&shifted, &DenseVector::zeros(2)).is_err());
    }

    #[test]
    fn component_rescaling_single_edge_by_hand() {
        let a = build_renormalized_affinity(&single_edge());
        let basis = eigendecompose(&a, 10).unwrap();
        let shifted = apply_spectra_shift(&a, 1.0).unwrap();
        let x = DenseVector::new(vec![1.0, 0.0]);
        assert!(component_rescaling_check(&shifted, &basis, &x).unwrap() <= 1e-10);
        // Â_1 x = [1.5, 0.5]; its components along [1,1]/√2 and [1,-1]/√2
        // are 2/√2 = 2·(1/√2) and 1/√2 = 1·(1/√2).
        let ax = shifted.matrix().mul_vec(x.as_slice());
        assert!((ax[0] - 1.5).abs() < 1e-15 && (ax[1] - 0.5).abs() < 1e-15);
        let zero = apply_spectra_shift(&a, 0.0).unwrap();
        assert!(component_rescaling_check(&zero, &basis, &x).unwrap() <= 1e-10);
    }

    #[test]
    fn relu_affinity_is_not_energy_preserving() {
        let g = Graph::new(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        let a = build_renormalized_affinity(&g);
        let phi = |x: &DenseVector| {
            let ax = DenseMatrix::from_vec(4, 1, a.matrix().mul_vec(x.as_slice())).unwrap();
            DenseVector::new(relu(&ax).into_vec())
        };
        let probes = vec![
            DenseVector::new(vec![1.0, -1.0, 1.0, -1.0]),
            DenseVector::new(vec![0.3, 0.1, -0.7, 2.0]),
        ];
        assert!(!is_energy_preserving(phi, &probes, 1e-9));
        let identity = |x: &DenseVector| x.clone();
        assert!(is_energy_preserving(identity, &probes, 1e-12));
    }
}
