//! Small row-major dense matrix used by the model.

use std::ops::{Index, IndexMut};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data has the wrong length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data = rows
            .iter()
            .flat_map(|r| {
                assert_eq!(r.len(), cols, "ragged rows");
                r.iter().copied()
            })
            .collect();
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |i| self.data[i * self.cols + j])
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// `out += self * w^T`, where `w` is `out_dim x in_dim`.
    pub fn matmul_t_acc(&self, w: &Mat, out: &mut Mat) {
        debug_assert_eq!(self.cols, w.cols);
        debug_assert_eq!((out.rows, out.cols), (self.rows, w.rows));
        for i in 0..self.rows {
            let x = self.row(i);
            let o = &mut out.data[i * w.rows..(i + 1) * w.rows];
            for (r, ov) in o.iter_mut().enumerate() {
                *ov += dot(x, w.row(r));
            }
        }
    }

    pub fn matmul_t(&self, w: &Mat) -> Mat {
        let mut out = Mat::zeros(self.rows, w.rows);
        self.matmul_t_acc(w, &mut out);
        out
    }

    /// `out += self * w`, where `w` is `cols x out_dim`.
    pub fn matmul_acc(&self, w: &Mat, out: &mut Mat) {
        debug_assert_eq!(self.cols, w.rows);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let o = &mut out.data[i * w.cols..(i + 1) * w.cols];
                for (ov, wv) in o.iter_mut().zip(w.row(k)) {
                    *ov += a * wv;
                }
            }
        }
    }

    /// `out += self^T * x`; with `self = dY` (n x out) and `x` (n x in) this is
    /// the weight gradient of `Y = X W^T`.
    pub fn t_matmul_acc(&self, x: &Mat, out: &mut Mat) {
        debug_assert_eq!(self.rows, x.rows);
        debug_assert_eq!((out.rows, out.cols), (self.cols, x.cols));
        for i in 0..self.rows {
            let xr = x.row(i);
            for r in 0..self.cols {
                let d = self.data[i * self.cols + r];
                if d == 0.0 {
                    continue;
                }
                for (ov, xv) in out.row_mut(r).iter_mut().zip(xr) {
                    *ov += d * xv;
                }
            }
        }
    }

    pub fn add_row_vector(&mut self, b: &[f64]) {
        for i in 0..self.rows {
            for (v, bv) in self.row_mut(i).iter_mut().zip(b) {
                *v += bv;
            }
        }
    }

    /// Column sums accumulated into `out`.
    pub fn col_sum_acc(&self, out: &mut [f64]) {
        for i in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows reordered so that new row `i` is old row `perm[i]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Mat {
        let mut out = Mat::zeros(self.rows, self.cols);
        for (new, &old) in perm.iter().enumerate() {
            out.row_mut(new).copy_from_slice(self.row(old));
        }
        out
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products() {
        let x = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let w = Mat::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 2.0]]);
        let y = x.matmul_t(&w);
        assert_eq!(y.to_rows(), vec![vec![1.0, 3.0, 4.0], vec![3.0, 7.0, 8.0]]);

        let mut back = Mat::zeros(2, 2);
        y.matmul_acc(&w, &mut back);
        assert_eq!(back.to_rows(), vec![vec![4.0, 11.0], vec![10.0, 23.0]]);

        let mut gw = Mat::zeros(3, 2);
        y.t_matmul_acc(&x, &mut gw);
        assert_eq!(gw[(0, 0)], 1.0 * 1.0 + 3.0 * 3.0);
        assert_eq!(gw[(2, 1)], 4.0 * 2.0 + 8.0 * 4.0);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
