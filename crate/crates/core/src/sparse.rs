//! Compressed sparse row storage for relation adjacency matrices.

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn empty(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            row_offsets: vec![0; rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a 0/1 matrix from `(row, col)` pairs. Duplicates collapse to a
    /// single entry; columns within a row end up sorted.
    pub fn from_pairs(rows: usize, cols: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
        for &(r, c) in &pairs {
            assert!(r < rows && c < cols, "entry ({r}, {c}) outside {rows}x{cols}");
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut row_offsets = vec![0; rows + 1];
        for &(r, _) in &pairs {
            row_offsets[r + 1] += 1;
        }
        for r in 0..rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        let col_indices: Vec<usize> = pairs.iter().map(|&(_, c)| c).collect();
        let values = vec![1.0; col_indices.len()];
        SparseMatrix {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Entry-index range of row `r` into `col_indices` / `values`.
    #[inline]
    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.row_offsets[r]..self.row_offsets[r + 1]
    }

    /// Column indices of the nonzeros in row `r`.
    pub fn row(&self, r: usize) -> &[usize] {
        &self.col_indices[self.row_range(r)]
    }

    /// Position of entry `(r, c)` in the entry arrays.
    pub fn find(&self, r: usize, c: usize) -> Option<usize> {
        let range = self.row_range(r);
        self.col_indices[range.clone()]
            .binary_search(&c)
            .ok()
            .map(|k| range.start + k)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.find(r, c).map_or(0.0, |k| self.values[k])
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.find(r, c).is_some()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let pairs = (0..self.rows).flat_map(|r| self.row(r).iter().map(move |&c| (c, r)));
        SparseMatrix::from_pairs(self.cols, self.rows, pairs)
    }

    /// Iterates `(row, col)` for all stored entries in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| self.row(r).iter().map(move |&c| (r, c)))
    }

    /// Row-vector product `vᵀ M`.
    pub fn spmv_left(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(
            v.len(),
            self.rows,
            "spmv_left: vector length {} does not match {} rows",
            v.len(),
            self.rows
        );
        let mut out = vec![0.0; self.cols];
        for (r, &x) in v.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for k in self.row_range(r) {
                out[self.col_indices[k]] += x * self.values[k];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_collapse_and_rows_are_sorted() {
        let m = SparseMatrix::from_pairs(3, 3, [(0, 2), (0, 1), (0, 2), (2, 0)]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.row(0), &[1, 2]);
        assert_eq!(m.row_offsets(), &[0, 2, 2, 3]);
    }

    #[test]
    fn spmv_single_edge_moves_one_hot() {
        let m = SparseMatrix::from_pairs(3, 3, [(0, 1)]);
        assert_eq!(m.spmv_left(&[1.0, 0.0, 0.0]), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn identity_is_neutral() {
        let v = vec![0.3, -2.0, 5.5, 0.0];
        assert_eq!(SparseMatrix::identity(4).spmv_left(&v), v);
    }

    #[test]
    fn transpose_swaps_entries() {
        let m = SparseMatrix::from_pairs(3, 4, [(0, 3), (2, 1)]);
        let t = m.transpose();
        assert_eq!(t.rows(), 4);
        assert!(t.contains(3, 0) && t.contains(1, 2));
        assert_eq!(t.nnz(), 2);
        assert_eq!(t.transpose(), m);
    }

    #[test]
    #[should_panic(expected = "spmv_left")]
    fn spmv_rejects_wrong_length() {
        SparseMatrix::identity(3).spmv_left(&[1.0]);
    }
}
