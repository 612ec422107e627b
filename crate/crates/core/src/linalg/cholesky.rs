use super::{reverse_cuthill_mckee, CsrMatrix, LinalgError};

/// Envelope (skyline) Cholesky factor `P A P^T = L L^T`.
///
/// Row `i` of `L` is stored densely from its first nonzero column up to
/// the diagonal; fill stays inside this envelope.
#[derive(Debug, Clone)]
pub struct Cholesky {
    perm: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    values: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self, LinalgError> {
        if a.nrows() != a.ncols() {
            return Err(LinalgError::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        let n = a.nrows();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        let mut first = vec![0; n];
        for (i, fi) in first.iter_mut().enumerate() {
            let (cols, _) = a.row(perm[i]);
            *fi = cols.iter().map(|&c| inv[c]).filter(|&c| c <= i).min().unwrap_or(i);
        }
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + i - first[i] + 1);
        }
        let mut values = vec![0.0; offset[n]];
        for i in 0..n {
            let (cols, vals) = a.row(perm[i]);
            for (&c, &v) in cols.iter().zip(vals) {
                let j = inv[c];
                if j <= i {
                    values[offset[i] + j - first[i]] = v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let (ri, rj) = (offset[i] + k0 - fi, offset[j] + k0 - fj);
                let len = j - k0;
                let mut s = values[offset[i] + j - fi];
                for t in 0..len {
                    s -= values[ri + t] * values[rj + t];
                }
                if j < i {
                    values[offset[i] + j - fi] = s / values[offset[j + 1] - 1];
                } else {
                    if !(s > 0.0) {
                        return Err(LinalgError::NotPositiveDefinite {
                            pivot: perm[i],
                            value: s,
                        });
                    }
                    values[offset[i + 1] - 1] = s.sqrt();
                }
            }
        }
        Ok(Self {
            perm,
            first,
            offset,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Number of stored entries of the factor.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let n = self.dim();
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                found: b.len(),
            });
        }
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.values[self.offset[i]..self.offset[i + 1]];
            let mut s = y[i];
            for (t, &l) in row[..row.len() - 1].iter().enumerate() {
                s -= l * y[fi + t];
            }
            y[i] = s / row[row.len() - 1];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.values[self.offset[i]..self.offset[i + 1]];
            y[i] /= row[row.len() - 1];
            let yi = y[i];
            for (t, &l) in row[..row.len() - 1].iter().enumerate() {
                y[fi + t] -= l * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm2, residual};

    #[test]
    fn matches_nalgebra_on_laplacian() {
        // 2D five-point Laplacian on a 9 x 9 grid
        let m = 9;
        let idx = |i: usize, j: usize| i * m + j;
        let mut trip = vec![];
        for i in 0..m {
            for j in 0..m {
                trip.push((idx(i, j), idx(i, j), 4.0));
                if i > 0 {
                    trip.push((idx(i, j), idx(i - 1, j), -1.0));
                }
                if i + 1 < m {
                    trip.push((idx(i, j), idx(i + 1, j), -1.0));
                }
                if j > 0 {
                    trip.push((idx(i, j), idx(i, j - 1), -1.0));
                }
                if j + 1 < m {
                    trip.push((idx(i, j), idx(i, j + 1), -1.0));
                }
            }
        }
        let a = CsrMatrix::from_triplets(m * m, m * m, trip);
        let f: Vec<f64> = (0..m * m).map(|k| ((k * 7) % 11) as f64 - 5.0).collect();
        let x = Cholesky::factor(&a).unwrap().solve(&f).unwrap();
        let dense = a.to_dense().cholesky().unwrap();
        let xd = dense.solve(&nalgebra::DVector::from_vec(f.clone()));
        for (u, v) in x.iter().zip(xd.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!(norm2(&residual(&a, &f, &x)) < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let c = Cholesky::factor(&CsrMatrix::identity(3)).unwrap();
        assert!(c.solve(&[1.0]).is_err());
    }
}
