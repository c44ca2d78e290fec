use crate::error::{Error, Result};

use super::DenseMatrix;

/// Symmetric sparse matrix in compressed-row form.
///
/// Column indices are sorted within each row, duplicates are rejected and
/// every stored `(i, j)` has a mirror `(j, i)` with the identical value.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    dim: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            indptr: vec![0; dim + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            indptr: (0..=dim).collect(),
            indices: (0..dim).collect(),
            values: vec![1.0; dim],
        }
    }

    /// Build from a full list of `(row, col, value)` entries. Both halves of
    /// every off-diagonal pair must be present.
    pub fn from_triplets(dim: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(i, j, v) in &entries {
            if i >= dim || j >= dim {
                return Err(Error::InvalidSparse(format!(
                    "entry ({i}, {j}) out of bounds for dimension {dim}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidSparse(format!("entry ({i}, {j}) is not finite")));
            }
        }
        entries.sort_by_key(|e| (e.0, e.1));
        if let Some(w) = entries.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::InvalidSparse(format!(
                "duplicate entry ({}, {})",
                w[0].0, w[0].1
            )));
        }
        let mut indptr = vec![0usize; dim + 1];
        for &(i, _, _) in &entries {
            indptr[i + 1] += 1;
        }
        for i in 0..dim {
            indptr[i + 1] += indptr[i];
        }
        let m = Self {
            dim,
            indptr,
            indices: entries.iter().map(|e| e.1).collect(),
            values: entries.iter().map(|e| e.2).collect(),
        };
        m.check_symmetric()?;
        Ok(m)
    }

    /// Build from the upper triangle (`i <= j`); entries are mirrored.
    pub fn from_upper_triplets(dim: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut full = Vec::with_capacity(entries.len() * 2);
        for &(i, j, v) in entries {
            if i > j {
                return Err(Error::InvalidSparse(format!(
                    "entry ({i}, {j}) is below the diagonal"
                )));
            }
            full.push((i, j, v));
            if i != j {
                full.push((j, i, v));
            }
        }
        Self::from_triplets(dim, full)
    }

    fn check_symmetric(&self) -> Result<()> {
        for i in 0..self.dim {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                match self.get_stored(j, i) {
                    Some(w) if w == v => {}
                    Some(_) => {
                        return Err(Error::InvalidSparse(format!(
                            "entries ({i}, {j}) and ({j}, {i}) differ"
                        )))
                    }
                    None => {
                        return Err(Error::InvalidSparse(format!(
                            "entry ({i}, {j}) has no mirror ({j}, {i})"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    fn get_stored(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).ok().map(|k| vals[k])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.get_stored(i, j).unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// Returns `self + shift * I`, inserting diagonal entries where absent.
    pub fn add_diagonal(&self, shift: f64) -> Self {
        let mut indptr = Vec::with_capacity(self.dim + 1);
        let mut indices = Vec::with_capacity(self.nnz() + self.dim);
        let mut values = Vec::with_capacity(self.nnz() + self.dim);
        indptr.push(0);
        for i in 0..self.dim {
            let (cols, vals) = self.row(i);
            let mut placed = false;
            for (&j, &v) in cols.iter().zip(vals) {
                if !placed && j >= i {
                    if j == i {
                        indices.push(i);
                        values.push(v + shift);
                        placed = true;
                        continue;
                    }
                    indices.push(i);
                    values.push(shift);
                    placed = true;
                }
                indices.push(j);
                values.push(v);
            }
            if !placed {
                indices.push(i);
                values.push(shift);
            }
            indptr.push(indices.len());
        }
        Self {
            dim: self.dim,
            indptr,
            indices,
            values,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out.set(i, j, v);
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.row(i).1.iter().sum()).collect()
    }

    /// `self * x` for a single vector.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        (0..self.dim)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_asymmetric_and_duplicates() {
        assert!(SparseSymMatrix::from_triplets(2, vec![(0, 1, 1.0)]).is_err());
        assert!(SparseSymMatrix::from_triplets(2, vec![(0, 1, 1.0), (1, 0, 2.0)]).is_err());
        assert!(SparseSymMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 0, 1.0)]).is_err());
        assert!(SparseSymMatrix::from_triplets(2, vec![(0, 2, 1.0)]).is_err());
        assert!(SparseSymMatrix::from_triplets(2, vec![(0, 1, 1.0), (1, 0, 1.0)]).is_ok());
    }

    #[test]
    fn add_diagonal_inserts_and_updates() {
        let m = SparseSymMatrix::from_upper_triplets(3, &[(0, 1, 2.0), (2, 2, 1.0)]).unwrap();
        let s = m.add_diagonal(0.5);
        assert_eq!(s.diagonal(), vec![0.5, 0.5, 1.5]);
        assert_eq!(s.get(0, 1), 2.0);
        assert_eq!(s.get(1, 0), 2.0);
        let (cols, _) = s.row(1);
        assert_eq!(cols, &[0, 1]);
        assert_eq!(m.add_diagonal(0.0).to_dense(), m.to_dense());
    }
}
