//! Dense row-major point clouds.

use serde::{Deserialize, Serialize};

/// `len` points in `dim` dimensions, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0, "points need at least one dimension");
        assert_eq!(data.len() % dim, 0, "data length is not a multiple of dim");
        Self { dim, data }
    }

    pub fn zeros(len: usize, dim: usize) -> Self {
        Self::new(dim, vec![0.0; len * dim])
    }

    /// Builds a cloud from rows; every row must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(1);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            assert_eq!(r.as_ref().len(), dim, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::new(dim, data)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn rows_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        self.data.chunks_exact_mut(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Rows reordered so that row `k` of the result is row `order[k]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut data = Vec::with_capacity(order.len() * self.dim);
        for &i in order {
            data.extend_from_slice(self.row(i));
        }
        Self::new(self.dim, data)
    }

    /// Adds `shift` to every point.
    pub fn translated(&self, shift: &[f64]) -> Self {
        assert_eq!(shift.len(), self.dim);
        let mut out = self.clone();
        for r in out.rows_mut() {
            for (x, c) in r.iter_mut().zip(shift) {
                *x += c;
            }
        }
        out
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (a, x) in m.iter_mut().zip(r) {
                *a += x;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
