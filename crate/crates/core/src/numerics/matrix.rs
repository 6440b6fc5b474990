use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense row-major `f64` matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

// Below this many multiply-adds the rayon split costs more than it saves.
const PAR_THRESHOLD: usize = 1 << 15;

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} values for {rows}x{cols}", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("row {i} has {} values, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
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
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn column_sums(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for i in 0..self.rows {
            for (o, v) in out.data.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_mul(&self, other: &Matrix, op: &'static str, inner_a: usize, inner_b: usize) -> Result<()> {
        if inner_a != inner_b {
            return Err(Error::shape(
                op,
                format!("{}x{} with {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        Ok(())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        self.check_mul(other, "matmul", self.cols, other.rows)?;
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(n, m);
        let kernel = |(i, row): (usize, &mut [f64])| {
            let a = self.row(i);
            for (p, &aip) in a.iter().enumerate() {
                let b = other.row(p);
                for (o, &bpj) in row.iter_mut().zip(b) {
                    *o += aip * bpj;
                }
            }
        };
        if m == 0 {
            return Ok(out);
        }
        if n * k * m >= PAR_THRESHOLD {
            out.data.par_chunks_mut(m).enumerate().for_each(kernel);
        } else {
            out.data.chunks_mut(m).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        self.check_mul(other, "matmul_nt", self.cols, other.cols)?;
        let (n, k, m) = (self.rows, self.cols, other.rows);
        let mut out = Matrix::zeros(n, m);
        let kernel = |(i, row): (usize, &mut [f64])| {
            let a = self.row(i);
            for (j, o) in row.iter_mut().enumerate() {
                *o = dot(a, other.row(j));
            }
        };
        if m == 0 {
            return Ok(out);
        }
        if n * k * m >= PAR_THRESHOLD {
            out.data.par_chunks_mut(m).enumerate().for_each(kernel);
        } else {
            out.data.chunks_mut(m).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        self.check_mul(other, "matmul_tn", self.rows, other.rows)?;
        self.transpose().matmul(other)
    }

    pub fn concat_cols(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if let Some(bad) = parts.iter().find(|m| m.rows != rows) {
            return Err(Error::shape(
                "concat_cols",
                format!("row counts {rows} and {}", bad.rows),
            ));
        }
        let cols: usize = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(i));
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Column block `[start, start + width)`.
    pub fn slice_cols(&self, start: usize, width: usize) -> Matrix {
        Matrix::from_fn(self.rows, width, |i, j| self.get(i, start + j))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Matrix {
        let mut out = self.clone();
        if self.cols == 0 {
            return out;
        }
        for row in out.data.chunks_mut(self.cols) {
            softmax_in_place(row);
        }
        out
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(Matrix::identity(2).matmul(&a).unwrap(), a);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = Matrix::zeros(2, 3);
        let err = a.matmul(&Matrix::zeros(2, 3)).unwrap_err();
        assert!(err.to_string().contains("2x3 with 2x3"));
    }

    #[test]
    fn nt_and_tn_agree_with_transpose() {
        let a = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.5 - 2.0);
        let b = Matrix::from_fn(5, 4, |i, j| (i + 2 * j) as f64 * 0.25);
        assert_eq!(a.matmul_nt(&b).unwrap(), a.matmul(&b.transpose()).unwrap());
        let c = Matrix::from_fn(3, 2, |i, j| i as f64 - j as f64);
        assert_eq!(a.matmul_tn(&c).unwrap(), a.transpose().matmul(&c).unwrap());
    }

    #[test]
    fn concat_shapes() {
        let m = Matrix::concat_cols(&[&Matrix::zeros(2, 3), &Matrix::zeros(2, 2)]).unwrap();
        assert_eq!(m.shape(), (2, 5));
        assert!(Matrix::concat_cols(&[&Matrix::zeros(2, 3), &Matrix::zeros(3, 2)]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let m = Matrix::from_rows(&[vec![0.3; 4], vec![0.0, 3f64.ln(), 0.0, 0.0]]).unwrap();
        let s = m.softmax_rows();
        for j in 0..4 {
            assert!((s.get(0, j) - 0.25).abs() < 1e-15);
        }
        let two = Matrix::from_rows(&[vec![0.0, 3f64.ln()]]).unwrap().softmax_rows();
        assert!((two.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((two.get(0, 1) - 0.75).abs() < 1e-15);

        let peaked = Matrix::from_rows(&[vec![0.0, 50.0, 1.0, -3.0]]).unwrap().softmax_rows();
        assert!((peaked.get(0, 1) - 1.0).abs() < 1e-9);
        assert!(peaked.get(0, 0) < 1e-9);
    }

    #[test]
    fn parallel_matmul_matches_sequential() {
        let a = Matrix::from_fn(70, 40, |i, j| ((i * 31 + j * 17) % 13) as f64 / 7.0 - 0.9);
        let b = Matrix::from_fn(40, 30, |i, j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.1);
        let fast = a.matmul(&b).unwrap();
        for i in 0..70 {
            for j in 0..30 {
                let mut s = 0.0;
                for p in 0..40 {
                    s += a.get(i, p) * b.get(p, j);
                }
                assert_eq!(fast.get(i, j), s);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::{prop_assert, proptest};

        proptest! {
            #[test]
            fn softmax_rows_are_distributions(
                rows in 1usize..5,
                cols in 1usize..7,
                vals in proptest::collection::vec(-50.0f64..50.0, 35),
            ) {
                let m = Matrix::from_fn(rows, cols, |i, j| vals[i * cols + j]);
                let s = m.softmax_rows();
                for i in 0..rows {
                    prop_assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    prop_assert!(s.row(i).iter().all(|&p| (0.0..=1.0).contains(&p)));
                }
            }

            #[test]
            fn softmax_is_shift_invariant(
                cols in 1usize..7,
                vals in proptest::collection::vec(-20.0f64..20.0, 7),
                shift in -100.0f64..100.0,
            ) {
                let m = Matrix::from_fn(1, cols, |_, j| vals[j]);
                let a = m.softmax_rows();
                let b = m.map(|v| v + shift).softmax_rows();
                for j in 0..cols {
                    prop_assert!((a.get(0, j) - b.get(0, j)).abs() < 1e-12);
                }
            }
        }
    }
}
