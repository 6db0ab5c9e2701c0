//! Dense row-major matrices and `[N, T, D]` sequence tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                rows * cols,
                data.len(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(format!("Matrix::from_rows row {i}"), cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        debug_assert_eq!(self.shape(), other.shape());
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(n, m);
        if m == 0 {
            return out;
        }
        parallel::for_each_chunk_mut(&mut out.data, m, k * m, |i, out_row| {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        });
        out
    }

    /// `self · otherᵀ`.
    pub fn matmul_bt(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_bt inner dimension");
        let (n, k, m) = (self.rows, self.cols, other.rows);
        let mut out = Matrix::zeros(n, m);
        if m == 0 {
            return out;
        }
        parallel::for_each_chunk_mut(&mut out.data, m, k * m, |i, out_row| {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (j, o) in out_row.iter_mut().enumerate() {
                *o = dot(a_row, &other.data[j * k..(j + 1) * k]);
            }
        });
        out
    }

    /// `selfᵀ · other`.
    pub fn matmul_at(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "matmul_at inner dimension");
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(k, m);
        if m == 0 {
            return out;
        }
        // Each output row p accumulates over the batch in fixed order.
        parallel::for_each_chunk_mut(&mut out.data, m, n * m, |p, out_row| {
            for i in 0..n {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[i * m..(i + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        });
        out
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sequence tensor laid out as `[n][t][d]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    pub n: usize,
    pub t: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize, t: usize, d: usize) -> Self {
        Tensor3 {
            n,
            t,
            d,
            data: vec![0.0; n * t * d],
        }
    }

    pub fn from_vec(n: usize, t: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * t * d {
            return Err(Error::shape("Tensor3::from_vec", n * t * d, data.len()));
        }
        Ok(Tensor3 { n, t, d, data })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n, self.t, self.d]
    }

    #[inline]
    pub fn idx(&self, i: usize, t: usize, k: usize) -> usize {
        (i * self.t + t) * self.d + k
    }

    #[inline]
    pub fn get(&self, i: usize, t: usize, k: usize) -> f64 {
        self.data[self.idx(i, t, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, t: usize, k: usize, v: f64) {
        let j = self.idx(i, t, k);
        self.data[j] = v;
    }

    /// The `[n, d]` slab at time step `t`.
    pub fn step(&self, t: usize) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.d);
        for i in 0..self.n {
            let src = self.idx(i, t, 0);
            m.row_mut(i)
                .copy_from_slice(&self.data[src..src + self.d]);
        }
        m
    }

    /// Assembles a tensor from per-step `[n, d]` slabs.
    pub fn from_steps(steps: &[Matrix]) -> Result<Self> {
        let first = steps
            .first()
            .ok_or(Error::EmptySample("Tensor3::from_steps"))?;
        let (n, d) = first.shape();
        let t = steps.len();
        let mut out = Tensor3::zeros(n, t, d);
        for (s, m) in steps.iter().enumerate() {
            if m.shape() != (n, d) {
                return Err(Error::shape(
                    format!("Tensor3::from_steps step {s}"),
                    format!("{n}x{d}"),
                    format!("{}x{}", m.rows, m.cols),
                ));
            }
            for i in 0..n {
                let dst = out.idx(i, s, 0);
                out.data[dst..dst + d].copy_from_slice(m.row(i));
            }
        }
        Ok(out)
    }

    /// Flattens each sample to one row of length `t·d`.
    pub fn flatten(&self) -> Matrix {
        Matrix {
            rows: self.n,
            cols: self.t * self.d,
            data: self.data.clone(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Tensor3 {
        let block = self.t * self.d;
        let mut data = Vec::with_capacity(idx.len() * block);
        for &i in idx {
            data.extend_from_slice(&self.data[i * block..(i + 1) * block]);
        }
        Tensor3 {
            n: idx.len(),
            t: self.t,
            d: self.d,
            data,
        }
    }

    /// Time window `[t0, t1)`.
    pub fn time_window(&self, t0: usize, t1: usize) -> Tensor3 {
        let mut out = Tensor3::zeros(self.n, t1 - t0, self.d);
        for i in 0..self.n {
            for t in t0..t1 {
                let src = self.idx(i, t, 0);
                let dst = out.idx(i, t - t0, 0);
                out.data[dst..dst + self.d].copy_from_slice(&self.data[src..src + self.d]);
            }
        }
        out
    }

    /// Stacks samples of `other` after those of `self`.
    pub fn concat(&self, other: &Tensor3) -> Result<Tensor3> {
        if self.t != other.t || self.d != other.d {
            return Err(Error::shape(
                "Tensor3::concat",
                format!("[*, {}, {}]", self.t, self.d),
                format!("[*, {}, {}]", other.t, other.d),
            ));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Tensor3 {
            n: self.n + other.n,
            t: self.t,
            d: self.d,
            data,
        })
    }

    /// Mean over time, giving `[n, d]`.
    pub fn mean_over_time(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.d);
        for i in 0..self.n {
            for t in 0..self.t {
                for k in 0..self.d {
                    m.data[i * self.d + k] += self.get(i, t, k);
                }
            }
        }
        m.scale(1.0 / self.t as f64)
    }
}
