//! Compressed sparse row matrices with a mesh-derived pattern.

use std::collections::BTreeSet;

use crate::mesh::Mesh;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an all-zero matrix from per-row sorted column sets.
    pub fn from_pattern(rows: Vec<BTreeSet<usize>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in rows {
            col_idx.extend(r);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    /// Pattern coupling every unknown of each element with every other one,
    /// plus the diagonal. Unknowns are numbered node-major:
    /// `node * n_fields + field`.
    pub fn for_mesh(mesh: &Mesh, n_fields: usize) -> Self {
        let n = mesh.n_nodes() * n_fields;
        let mut rows = vec![BTreeSet::new(); n];
        for (i, r) in rows.iter_mut().enumerate() {
            r.insert(i);
        }
        for e in 0..mesh.n_elements() {
            let en = mesh.element_nodes(e);
            for &a in en {
                for &b in en {
                    for fi in 0..n_fields {
                        let row = &mut rows[a * n_fields + fi];
                        for fj in 0..n_fields {
                            row.insert(b * n_fields + fj);
                        }
                    }
                }
            }
        }
        Self::from_pattern(rows)
    }

    pub fn identity(n: usize) -> Self {
        let rows = (0..n).map(|i| BTreeSet::from([i])).collect();
        let mut m = Self::from_pattern(rows);
        m.values.iter_mut().for_each(|v| *v = 1.0);
        m
    }

    pub fn from_dense(a: &[Vec<f64>]) -> Self {
        let rows = a
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        let mut m = Self::from_pattern(rows);
        for (i, r) in a.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    m.add(i, j, v);
                }
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi].binary_search(&j).ok().map(|p| lo + p)
    }

    /// Adds `v` at (i, j).
    ///
    /// # Panics
    /// If (i, j) is outside the sparsity pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside sparsity pattern"));
        self.values[p] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.values[p])
    }

    /// Replaces row `i` with the unit row e_i.
    pub fn set_identity_row(&mut self, i: usize) {
        for p in self.row_ptr[i]..self.row_ptr[i + 1] {
            self.values[p] = if self.col_idx[p] == i { 1.0 } else { 0.0 };
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// Lower and upper bandwidths of the pattern.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.n {
            for &j in &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]] {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, build_line_mesh};

    #[test]
    fn line_pattern_is_tridiagonal_block() {
        let m = build_line_mesh(1.0, 2, 1.0, false).unwrap();
        let a = CsrMatrix::for_mesh(&m, 2);
        assert_eq!(a.n(), 10);
        // Node 2 is shared by both elements and couples with all 5 nodes.
        assert_eq!(a.row(4).count(), 10);
        assert_eq!(a.row(0).count(), 6);
        assert_eq!(a.bandwidths(), (5, 5));
    }

    #[test]
    fn pattern_is_deterministic() {
        let m = build_box_mesh([1.0, 1.0, 2.0], [2, 2, 3], 2).unwrap();
        let a = CsrMatrix::for_mesh(&m, 2);
        let b = CsrMatrix::for_mesh(&m, 2);
        assert_eq!(a.row_ptr(), b.row_ptr());
        assert_eq!(a.col_idx(), b.col_idx());
    }

    #[test]
    fn add_get_and_identity_rows() {
        let mut a = CsrMatrix::from_dense(&[vec![1.0, 2.0], vec![0.0, 3.0]]);
        a.add(0, 1, 1.0);
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.get(1, 0), 0.0);
        a.set_identity_row(0);
        assert_eq!(a.get(0, 0), 1.0);
        assert_eq!(a.get(0, 1), 0.0);
        let mut y = [0.0; 2];
        a.matvec(&[1.0, 1.0], &mut y);
        assert_eq!(y, [1.0, 3.0]);
    }
}
