//! Sparse non-negative integer matrices for exact path counting.

use crate::error::{Error, Result};

/// CSR matrix of `u64` counts. Column indices are sorted within each row and
/// explicit zeros are never stored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountMatrix {
    n_rows: usize,
    n_cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<u64>,
}

impl CountMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        CountMatrix {
            n_rows,
            n_cols,
            offsets: vec![0; n_rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Binary matrix from a CSR sparsity pattern.
    pub fn from_pattern(n_rows: usize, n_cols: usize, offsets: &[usize], cols: &[usize]) -> Self {
        debug_assert_eq!(offsets.len(), n_rows + 1);
        CountMatrix {
            n_rows,
            n_cols,
            offsets: offsets.to_vec(),
            indices: cols.to_vec(),
            values: vec![1; cols.len()],
        }
    }

    pub fn from_dense(rows: &[Vec<u64>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut m = CountMatrix::zeros(rows.len(), n_cols);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0 {
                    m.indices.push(j);
                    m.values.push(v);
                }
            }
            m.offsets[i + 1] = m.indices.len();
        }
        m
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[u64]) {
        let span = self.offsets[r]..self.offsets[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> u64 {
        let (idx, vals) = self.row(r);
        idx.binary_search(&c).map_or(0, |k| vals[k])
    }

    pub fn transpose(&self) -> CountMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.n_cols {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0; self.nnz()];
        for r in 0..self.n_rows {
            let (idx, vals) = self.row(r);
            for (&c, &v) in idx.iter().zip(vals) {
                indices[next[c]] = r;
                values[next[c]] = v;
                next[c] += 1;
            }
        }
        CountMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            offsets,
            indices,
            values,
        }
    }

    /// Row-by-row Gustavson product with checked arithmetic.
    pub fn checked_mul(&self, rhs: &CountMatrix) -> Result<CountMatrix> {
        if self.n_cols != rhs.n_rows {
            return Err(Error::Shape {
                op: "count matrix product",
                lhs: vec![self.n_rows, self.n_cols],
                rhs: vec![rhs.n_rows, rhs.n_cols],
            });
        }
        let mut acc = vec![0u64; rhs.n_cols];
        let mut touched = vec![false; rhs.n_cols];
        let mut cols: Vec<usize> = Vec::new();
        let mut out = CountMatrix::zeros(self.n_rows, rhs.n_cols);
        for r in 0..self.n_rows {
            let (li, lv) = self.row(r);
            for (&k, &a) in li.iter().zip(lv) {
                let (ri, rv) = rhs.row(k);
                for (&c, &b) in ri.iter().zip(rv) {
                    let prod = a
                        .checked_mul(b)
                        .ok_or_else(|| Error::Overflow(format!("row {r}, col {c}")))?;
                    acc[c] = acc[c]
                        .checked_add(prod)
                        .ok_or_else(|| Error::Overflow(format!("row {r}, col {c}")))?;
                    if !touched[c] {
                        touched[c] = true;
                        cols.push(c);
                    }
                }
            }
            cols.sort_unstable();
            for &c in &cols {
                if acc[c] != 0 {
                    out.indices.push(c);
                    out.values.push(acc[c]);
                }
                acc[c] = 0;
                touched[c] = false;
            }
            cols.clear();
            out.offsets[r + 1] = out.indices.len();
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Vec<Vec<u64>> {
        let mut d = vec![vec![0; self.n_cols]; self.n_rows];
        for (r, row) in d.iter_mut().enumerate() {
            let (idx, vals) = self.row(r);
            for (&c, &v) in idx.iter().zip(vals) {
                row[c] = v;
            }
        }
        d
    }

    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && *self == self.transpose()
    }
}
