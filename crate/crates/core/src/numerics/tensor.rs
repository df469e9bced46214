use crate::error::{Error, Result};

/// Dense row-major `f64` tensor.
///
/// Only rank 0 (scalar), rank 1 and rank 2 are used by the model code; most
/// operations require rank 2 and treat rank 1 as a single row.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            requires_grad: false,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|x| *x = value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
            requires_grad: false,
        }
    }

    /// A `1 × n` matrix.
    pub fn row(values: Vec<f64>) -> Self {
        Self {
            shape: vec![1, values.len()],
            data: values,
            requires_grad: false,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("Tensor::from_rows", &[cols], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Marks the tensor as a trainable leaf when placed on a tape.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows of the matrix view (rank 1 is one row, rank 0 is `1 × 1`).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape("Tensor::item", &self.shape, &[1]));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() > 2 {
            return Err(Error::shape(op, &self.shape, &[]));
        }
        Ok((self.rows(), self.cols()))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.matrix_dims("matmul")?;
        let (k2, n) = other.matrix_dims("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.matrix_dims("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }

    /// Softmax along `axis` (0 = down columns, 1 = across rows) of a matrix.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if self.data.iter().any(|x| x.is_nan()) {
            return Err(Error::NonFinite("softmax input"));
        }
        let (m, n) = self.matrix_dims("softmax")?;
        if m == 0 || n == 0 {
            return Err(Error::invalid("softmax over an empty axis"));
        }
        let mut out = self.data.clone();
        match axis {
            1 => {
                for r in 0..m {
                    softmax_in_place(&mut out[r * n..(r + 1) * n]);
                }
            }
            0 => {
                let mut col = vec![0.0; m];
                for c in 0..n {
                    for r in 0..m {
                        col[r] = self.data[r * n + c];
                    }
                    softmax_in_place(&mut col);
                    for r in 0..m {
                        out[r * n + c] = col[r];
                    }
                }
            }
            _ => return Err(Error::invalid(format!("softmax axis {axis} out of range"))),
        }
        Tensor::new(vec![m, n], out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
            requires_grad: false,
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            requires_grad: false,
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        let (m, n) = self.matrix_dims("slice_rows")?;
        if start > end || end > m {
            return Err(Error::invalid(format!("row range {start}..{end} out of 0..{m}")));
        }
        Tensor::new(vec![end - start, n], self.data[start * n..end * n].to_vec())
    }

    /// Copy with the same values reshaped; element count must agree.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let mut t = Tensor::new(shape.to_vec(), self.data.clone())?;
        t.requires_grad = self.requires_grad;
        Ok(t)
    }
}

/// Numerically stable softmax of a slice (max subtraction).
pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

/// Stable `log(sum(exp(xs)))`.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let m = a.len();
        let n = b[0].len();
        let k = b.len();
        let mut out = vec![vec![0.0; n]; m];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i][j] += a[i][p] * b[p][j];
                }
            }
        }
        out
    }

    #[test]
    fn identity_times_matrix() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(Tensor::identity(2).matmul(&a).unwrap(), a);
    }

    #[test]
    fn projector_times_column() {
        let p = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let v = Tensor::from_rows(&[vec![5.0], vec![7.0]]).unwrap();
        assert_eq!(p.matmul(&v).unwrap().data(), &[5.0, 0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let b: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let expected = naive_matmul(&a, &b);
            let got = Tensor::from_rows(&a)
                .unwrap()
                .matmul(&Tensor::from_rows(&b).unwrap())
                .unwrap();
            for i in 0..3 {
                for j in 0..2 {
                    assert!((got.get(i, j) - expected[i][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = Tensor::zeros(&[2, 3]).matmul(&Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn softmax_uniform_and_reference_values() {
        let u = Tensor::row(vec![0.0; 3]).softmax(1).unwrap();
        for &x in u.data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = Tensor::row(vec![1.0, 2.0, 3.0]).softmax(1).unwrap();
        let expected = [0.09003057, 0.24472847, 0.66524096];
        for (got, want) in s.data().iter().zip(expected) {
            assert!((got - want).abs() < 5e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn softmax_shift_invariant() {
        let x = Tensor::row(vec![0.3, -1.2, 2.5, 0.0]);
        let a = x.softmax(1).unwrap();
        let b = x.map(|v| v + 123.456).softmax(1).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_columns() {
        let x = Tensor::from_rows(&[vec![2.0, 1.0], vec![0.0, 3.0]]).unwrap();
        let s = x.softmax(0).unwrap();
        assert!((s.get(0, 0) + s.get(1, 0) - 1.0).abs() < 1e-15);
        assert!((s.get(0, 1) + s.get(1, 1) - 1.0).abs() < 1e-15);
        assert!(s.get(0, 0) > s.get(1, 0));
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(Tensor::row(vec![1.0, f64::NAN]).softmax(1).is_err());
    }

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn log_sum_exp_matches_direct() {
        let xs = [0.1, -0.5, 2.0];
        let direct: f64 = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-14);
    }
}
