use std::fmt;

use rayon::prelude::*;

use crate::error::{DotError, Result};

/// Work size (multiply-adds) above which products are split across threads.
/// Each output row is still computed sequentially, so results do not depend on
/// the thread count.
const PAR_THRESHOLD: usize = 1 << 16;

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Sample-by-feature matrix: one row per sample.
pub type FeatureMatrix = Matrix;

impl Matrix {
    /// Builds a matrix, checking the element count and that every entry is finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(DotError::Input(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(DotError::shape(
                "Matrix::new",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(DotError::Input(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(DotError::shape(
                "Matrix::from_rows",
                format!("row 0 has {d} columns"),
                format!("row {i} has {}", r.len()),
            ));
        }
        Matrix::new(n, d, rows.concat())
    }

    pub(crate) fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn scalar(value: f64) -> Self {
        Matrix::filled(1, 1, value)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
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

    /// Value of a 1×1 matrix.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(DotError::shape(
                "matmul",
                self.shape_str(),
                other.shape_str(),
            ));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            let a = &self.data[i * k..(i + 1) * k];
            for (p, &a_ip) in a.iter().enumerate() {
                if a_ip == 0.0 {
                    continue;
                }
                let b = &other.data[p * n..(p + 1) * n];
                for (o, &b_pj) in out_row.iter_mut().zip(b) {
                    *o += a_ip * b_pj;
                }
            }
        };
        if m * k * n >= PAR_THRESHOLD {
            out.par_chunks_mut(n).enumerate().for_each(kernel);
        } else {
            out.chunks_mut(n).enumerate().for_each(kernel);
        }
        Ok(Matrix::from_vec(m, n, out))
    }

    /// `self · otherᵀ`, i.e. row-by-row dot products.
    pub fn matmul_bt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(DotError::shape(
                "matmul_bt",
                self.shape_str(),
                other.shape_str(),
            ));
        }
        let (m, n) = (self.rows, other.rows);
        let mut out = vec![0.0; m * n];
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            let a = self.row(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                *o = dot(a, other.row(j));
            }
        };
        if m * n * self.cols >= PAR_THRESHOLD {
            out.par_chunks_mut(n).enumerate().for_each(kernel);
        } else {
            out.chunks_mut(n).enumerate().for_each(kernel);
        }
        Ok(Matrix::from_vec(m, n, out))
    }

    /// `selfᵀ · other`.
    pub fn matmul_at(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(DotError::shape(
                "matmul_at",
                self.shape_str(),
                other.shape_str(),
            ));
        }
        self.transpose().matmul(other)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    fn zip_with(
        &self,
        other: &Matrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(DotError::shape(op, self.shape_str(), other.shape_str()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix::from_vec(self.rows, self.cols, data))
    }

    /// Adds a 1×cols row vector to every row.
    pub fn add_row(&self, row: &Matrix) -> Result<Matrix> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(DotError::shape(
                "add_row",
                self.shape_str(),
                row.shape_str(),
            ));
        }
        let mut out = self.clone();
        for r in out.data.chunks_exact_mut(self.cols) {
            for (x, b) in r.iter_mut().zip(&row.data) {
                *x += b;
            }
        }
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| v * c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_vec(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn add_assign_scaled(&mut self, other: &Matrix, c: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.row_iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for r in self.row_iter() {
            for (acc, v) in s.iter_mut().zip(r) {
                *acc += v;
            }
        }
        s
    }

    pub fn col_means(&self) -> Vec<f64> {
        let n = self.rows as f64;
        self.col_sums().into_iter().map(|s| s / n).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// New matrix made of the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_vec(idx.len(), self.cols, data)
    }

    /// Stacks `self` above `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(DotError::shape(
                "vstack",
                self.shape_str(),
                other.shape_str(),
            ));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix::from_vec(self.rows + other.rows, self.cols, data))
    }

    /// Each row divided by its sum. Rows summing to zero are left untouched.
    pub fn row_normalized(&self) -> Matrix {
        let mut out = self.clone();
        for r in out.data.chunks_exact_mut(self.cols) {
            let s: f64 = r.iter().sum();
            if s != 0.0 {
                r.iter_mut().for_each(|v| *v /= s);
            }
        }
        out
    }

    pub(crate) fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in self.row_iter() {
            writeln!(f, "  {r:?}")?;
        }
        write!(f, "]")
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row-wise softmax of `s / scale`, stabilised by subtracting each row's maximum.
pub fn row_softmax(s: &Matrix, scale: f64) -> Result<Matrix> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(DotError::Parameter(format!(
            "softmax scale must be positive, got {scale}"
        )));
    }
    if !s.is_finite() {
        return Err(DotError::Input("non-finite softmax input".into()));
    }
    Ok(row_softmax_unchecked(s, scale))
}

pub(crate) fn row_softmax_unchecked(s: &Matrix, scale: f64) -> Matrix {
    let mut out = s.clone();
    for r in out.data.chunks_exact_mut(s.cols) {
        let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in r.iter_mut() {
            *v = ((*v - max) / scale).exp();
            total += *v;
        }
        for v in r.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// `(i, j) -> ‖x_i − y_j‖²`, clamped at zero.
pub fn pairwise_sq_dist(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    if x.cols != y.cols {
        return Err(DotError::shape(
            "pairwise_sq_dist",
            x.shape_str(),
            y.shape_str(),
        ));
    }
    let x_norms: Vec<f64> = x.row_iter().map(|r| dot(r, r)).collect();
    let y_norms: Vec<f64> = y.row_iter().map(|r| dot(r, r)).collect();
    let mut g = x.matmul_bt(y)?;
    for (i, &xi) in x_norms.iter().enumerate() {
        for (j, v) in g.row_mut(i).iter_mut().enumerate() {
            *v = (xi + y_norms[j] - 2.0 * *v).max(0.0);
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;

    fn random(rng: &mut Rng64, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect())
    }

    #[test]
    fn matmul_identity_and_hand_example() {
        let mut rng = Rng64::seed(1);
        let b = random(&mut rng, 3, 4);
        assert_eq!(Matrix::identity(3).matmul(&b).unwrap(), b);

        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let c = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let p = a.matmul(&c).unwrap();
        assert_eq!(p.as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng64::seed(7);
        let a = random(&mut rng, 5, 4);
        let b = random(&mut rng, 4, 3);
        let p = a.matmul(&b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += a.get(i, k) * b.get(k, j);
                }
                assert!((p.get(i, j) - s).abs() < 1e-12);
            }
        }
        let bt = a.matmul_bt(&b.transpose()).unwrap();
        assert!(bt.max_abs_diff(&p) < 1e-12);
        let at = a.transpose().matmul_at(&b).unwrap();
        assert!(at.max_abs_diff(&p) < 1e-12);
    }

    #[test]
    fn parallel_path_is_identical_to_sequential() {
        let mut rng = Rng64::seed(3);
        let a = random(&mut rng, 64, 40);
        let b = random(&mut rng, 40, 64);
        let p = a.matmul(&b).unwrap();
        for i in [0, 17, 63] {
            for j in [0, 31, 63] {
                let s: f64 = (0..40).fold(0.0, |acc, k| {
                    let v = a.get(i, k);
                    if v == 0.0 {
                        acc
                    } else {
                        acc + v * b.get(k, j)
                    }
                });
                assert_eq!(p.get(i, j).to_bits(), s.to_bits());
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("2x3") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let z = row_softmax(&Matrix::zeros(2, 2), 1.0).unwrap();
        assert!(z.as_slice().iter().all(|&v| (v - 0.5).abs() < 1e-15));

        let s = Matrix::from_rows(&[vec![3f64.ln(), 0.0]]).unwrap();
        let p = row_softmax(&s, 1.0).unwrap();
        assert!((p.get(0, 0) - 0.75).abs() < 1e-15);
        assert!((p.get(0, 1) - 0.25).abs() < 1e-15);

        let big = Matrix::from_rows(&[vec![1000.0, 0.0, 0.0]]).unwrap();
        let p = row_softmax(&big, 1.0).unwrap();
        assert!(p.is_finite());
        assert_eq!(p.get(0, 0), 1.0);
    }

    #[test]
    fn softmax_rejects_bad_scale_and_input() {
        let m = Matrix::zeros(1, 2);
        assert!(matches!(row_softmax(&m, 0.0), Err(DotError::Parameter(_))));
        assert!(matches!(row_softmax(&m, -1.0), Err(DotError::Parameter(_))));
        let bad = Matrix::from_vec(1, 2, vec![f64::NAN, 0.0]);
        assert!(matches!(row_softmax(&bad, 1.0), Err(DotError::Input(_))));
    }

    #[test]
    fn sq_dist_examples() {
        let p = Matrix::from_rows(&[vec![1.5, -2.0]]).unwrap();
        assert_eq!(pairwise_sq_dist(&p, &p).unwrap().as_slice(), &[0.0]);
        let x = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![3.0]]).unwrap();
        assert_eq!(pairwise_sq_dist(&x, &y).unwrap().as_slice(), &[9.0]);
        assert!(pairwise_sq_dist(&Matrix::zeros(2, 3), &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn sq_dist_matches_double_loop() {
        let mut rng = Rng64::seed(11);
        let x = random(&mut rng, 4, 3);
        let y = random(&mut rng, 5, 3);
        let d = pairwise_sq_dist(&x, &y).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += (x.get(i, k) - y.get(j, k)).powi(2);
                }
                assert!((d.get(i, j) - s).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn new_rejects_non_finite_and_bad_length() {
        assert!(Matrix::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(0, 2, vec![]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix(max_r: usize, max_c: usize) -> impl Strategy<Value = Matrix> {
            (1..=max_r, 1..=max_c).prop_flat_map(|(r, c)| {
                proptest::collection::vec(-50.0f64..50.0, r * c)
                    .prop_map(move |d| Matrix::from_vec(r, c, d))
            })
        }

        proptest! {
            #[test]
            fn softmax_rows_sum_to_one(s in matrix(6, 8), scale in 0.1f64..10.0) {
                let p = row_softmax(&s, scale).unwrap();
                for r in p.row_iter() {
                    let t: f64 = r.iter().sum();
                    prop_assert!((t - 1.0).abs() < 1e-12);
                    prop_assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
                }
            }

            #[test]
            fn softmax_shift_invariant(
                s in matrix(5, 6),
                shifts in proptest::collection::vec(-100.0f64..100.0, 5),
                scale in 0.5f64..4.0,
            ) {
                let mut shifted = s.clone();
                for i in 0..s.rows() {
                    let c = shifts[i % shifts.len()];
                    shifted.row_mut(i).iter_mut().for_each(|v| *v += c);
                }
                let a = row_softmax(&s, scale).unwrap();
                let b = row_softmax(&shifted, scale).unwrap();
                prop_assert!(a.max_abs_diff(&b) < 1e-12);
            }

            #[test]
            fn self_distance_symmetric_zero_diagonal(x in matrix(7, 4)) {
                let d = pairwise_sq_dist(&x, &x).unwrap();
                for i in 0..x.rows() {
                    prop_assert!(d.get(i, i).abs() < 1e-12);
                    for j in 0..x.rows() {
                        prop_assert!((d.get(i, j) - d.get(j, i)).abs() < 1e-12);
                        prop_assert!(d.get(i, j) >= 0.0);
                    }
                }
            }
        }
    }
}
