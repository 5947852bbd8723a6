//! Direct LU factorization for the unsymmetric banded systems produced by
//! node-major numbering on structured meshes.
//!
//! Rows and columns are equilibrated before factorization and partial
//! pivoting is done within the lower band, so the upper band grows to
//! `kl + ku`.

use crate::error::{Error, Result};
use crate::numerics::sparse::CsrMatrix;

pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    a: Vec<f64>,
    piv: Vec<usize>,
    row_scale: Vec<f64>,
    col_scale: Vec<f64>,
}

impl BandLu {
    /// Factors `m`. `n_fields` is only used to translate a failing row into a
    /// (node, field) pair for the error.
    pub fn factor(m: &CsrMatrix, n_fields: usize) -> Result<Self> {
        let n = m.n();
        let (kl, ku) = m.bandwidths();
        let width = 2 * kl + ku + 1;
        let nf = n_fields.max(1);

        let mut row_scale = vec![0.0; n];
        for (i, s) in row_scale.iter_mut().enumerate() {
            let mx = m.row(i).fold(0.0f64, |acc, (_, v)| acc.max(v.abs()));
            if !(mx > 0.0) || !mx.is_finite() {
                return Err(Error::SingularMatrix {
                    row: i,
                    node: i / nf,
                    field: i % nf,
                });
            }
            *s = 1.0 / mx;
        }
        let mut col_max = vec![0.0f64; n];
        for i in 0..n {
            for (j, v) in m.row(i) {
                col_max[j] = col_max[j].max((v * row_scale[i]).abs());
            }
        }
        let mut col_scale = vec![0.0; n];
        for j in 0..n {
            if !(col_max[j] > 0.0) {
                return Err(Error::SingularMatrix {
                    row: j,
                    node: j / nf,
                    field: j % nf,
                });
            }
            col_scale[j] = 1.0 / col_max[j];
        }

        let mut a = vec![0.0; n * width];
        for i in 0..n {
            for (j, v) in m.row(i) {
                a[i * width + j + kl - i] = v * row_scale[i] * col_scale[j];
            }
        }
        let idx = |i: usize, j: usize| i * width + j + kl - i;
        let mut piv = vec![0; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = a[idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = a[idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > 1e-300) || !best.is_finite() {
                return Err(Error::SingularMatrix {
                    row: k,
                    node: k / nf,
                    field: k % nf,
                });
            }
            piv[k] = p;
            if p != k {
                for j in k..=last_col {
                    a.swap(idx(k, j), idx(p, j));
                }
            }
            let d = a[idx(k, k)];
            for i in k + 1..=last_row {
                let l = a[idx(i, k)] / d;
                a[idx(i, k)] = l;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        a[idx(i, j)] -= l * a[idx(k, j)];
                    }
                }
            }
        }
        Ok(BandLu {
            n,
            kl,
            ku,
            width,
            a,
            piv,
            row_scale,
            col_scale,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let (kl, ku, width) = (self.kl, self.ku, self.width);
        let idx = |i: usize, j: usize| i * width + j + kl - i;
        let mut y: Vec<f64> = b.iter().zip(&self.row_scale).map(|(v, s)| v * s).collect();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                y.swap(k, p);
            }
            let yk = y[k];
            if yk != 0.0 {
                for i in k + 1..=(k + kl).min(n.saturating_sub(1)) {
                    y[i] -= self.a[idx(i, k)] * yk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = y[k];
            for j in k + 1..=(k + kl + ku).min(n - 1) {
                s -= self.a[idx(k, j)] * y[j];
            }
            y[k] = s / self.a[idx(k, k)];
        }
        y.iter().zip(&self.col_scale).map(|(v, s)| v * s).collect()
    }
}

/// Solves `m x = b` by banded LU.
pub fn sparse_lu_solve(m: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    Ok(BandLu::factor(m, 1)?.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
                .unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let l = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= l * a[k][j];
                }
                b[i] -= l * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
            x[k] = (b[k] - s) / a[k][k];
        }
        x
    }

    fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
        let mut ax = vec![0.0; b.len()];
        a.matvec(x, &mut ax);
        let r: f64 = ax
            .iter()
            .zip(b)
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            .sqrt();
        r / b.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn identity() {
        let a = CsrMatrix::identity(4);
        let b = [1.0, -2.0, 3.0, 4.5];
        assert_eq!(sparse_lu_solve(&a, &b).unwrap(), b.to_vec());
    }

    #[test]
    fn laplacian_matches_dense() {
        let mut d = vec![vec![0.0; 5]; 5];
        for i in 0..5 {
            d[i][i] = 2.0;
            if i > 0 {
                d[i][i - 1] = -1.0;
            }
            if i < 4 {
                d[i][i + 1] = -1.0;
            }
        }
        let b = vec![1.0, 0.5, -1.0, 2.0, 0.25];
        let a = CsrMatrix::from_dense(&d);
        let x = sparse_lu_solve(&a, &b).unwrap();
        let xd = dense_solve(d, b);
        for (p, q) in x.iter().zip(&xd) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn needs_pivoting() {
        let d = vec![
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 2.0],
            vec![0.0, 3.0, 1.0],
        ];
        let b = vec![1.0, 2.0, 3.0];
        let a = CsrMatrix::from_dense(&d);
        let x = sparse_lu_solve(&a, &b).unwrap();
        assert!(residual(&a, &x, &b) < 1e-14);
    }

    #[test]
    fn singular_reports_row() {
        let d = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let a = CsrMatrix::from_dense(&d);
        match BandLu::factor(&a, 2) {
            Err(Error::SingularMatrix { row, node, field }) => {
                assert_eq!((row, node, field), (1, 0, 1));
            }
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("expected singular error"),
        }
    }

    #[test]
    fn advection_dominated_unsymmetric() {
        let n = 40;
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            d[i][i] = 1.0 + 1e-3;
            if i > 0 {
                d[i][i - 1] = -1.0;
            }
            if i + 1 < n {
                d[i][i + 1] = -1e-3;
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 2.0).collect();
        let a = CsrMatrix::from_dense(&d);
        let x = sparse_lu_solve(&a, &b).unwrap();
        assert!(residual(&a, &x, &b) < 1e-10);
    }

    proptest! {
        #[test]
        fn random_banded_systems(seed in proptest::collection::vec(-1.0f64..1.0, 60), scale in 1e-6f64..1e6) {
            let n = 12;
            let mut d = vec![vec![0.0; n]; n];
            let mut it = seed.iter().cycle();
            for i in 0..n {
                for j in i.saturating_sub(2)..(i + 3).min(n) {
                    d[i][j] = *it.next().unwrap();
                }
                d[i][i] += 4.0;
                // Badly scaled rows are the norm for mixed pressure/saturation systems.
                if i % 2 == 0 {
                    for v in d[i].iter_mut() {
                        *v *= scale;
                    }
                }
            }
            let b: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
            let a = CsrMatrix::from_dense(&d);
            let x = sparse_lu_solve(&a, &b).unwrap();
            let xd = dense_solve(d, b.clone());
            for (p, q) in x.iter().zip(&xd) {
                prop_assert!((p - q).abs() <= 1e-9 * q.abs().max(1.0));
            }
        }
    }
}
