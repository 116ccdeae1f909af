//! Dense row-major tensors and the handful of kernels the model and the
//! optimizers need.
//!
//! Reductions run sequentially in row-major order so that identical inputs
//! give bitwise-identical outputs. Non-finite values are rejected when a
//! tensor is constructed through [`Tensor::new`]; results of arithmetic are
//! checked with `debug_assert!` only.

use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, validating the shape against the data length and
    /// rejecting NaN/Inf.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Dimension(format!("shape {shape:?} has a zero-sized dimension")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero-sized dimension");
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled(&[1], value)
    }

    /// 2-D tensor from nested rows. Panics on ragged input; intended for
    /// literals in tests and fixtures.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(vec![rows.len(), cols], data).expect("valid literal")
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Identity matrix of size n×n.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Wrap data without the finiteness scan. Shape must still match.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(all_finite(&data), "non-finite tensor data");
        Self { shape, data }
    }

    /// Like [`Tensor::from_parts`] but lets non-finite values through, for
    /// model and optimizer outputs whose divergence the training loop detects
    /// and flags itself.
    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn is_finite(&self) -> bool {
        all_finite(&self.data)
    }

    /// (rows, cols) of a 2-D tensor.
    pub fn matrix_dims(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[m, n] => Ok((m, n)),
            s => Err(Error::Dimension(format!("expected a 2-D tensor, got shape {s:?}"))),
        }
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        let n = self.shape[1];
        self.data[i * n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.shape[1];
        &self.data[i * n..(i + 1) * n]
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.matrix_dims()?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor::from_parts(vec![n, m], out))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        self.map(|x| alpha * x)
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn expect_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn max_norm(&self) -> Result<f64> {
        max_norm(&self.data)
    }

    pub fn l2_norm(&self) -> Result<f64> {
        l2_norm(&self.data)
    }
}

pub(crate) fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// Largest absolute value.
pub fn max_norm(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Domain("max norm of an empty tensor".into()));
    }
    Ok(xs.iter().fold(0.0_f64, |acc, &x| acc.max(x.abs())))
}

/// Euclidean norm, accumulated left to right.
pub fn l2_norm(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Domain("l2 norm of an empty tensor".into()));
    }
    Ok(xs.iter().fold(0.0, |acc, &x| acc + x * x).sqrt())
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.matrix_dims()?;
    let (k2, n) = b.matrix_dims()?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions disagree: {m}x{k} by {k2}x{n}"
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm_nn(&a.data, &b.data, &mut out, m, k, n);
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub fn row_max_norms(t: &Tensor) -> Result<Tensor> {
    let (m, n) = t.matrix_dims()?;
    let out = (0..m)
        .map(|i| t.data[i * n..(i + 1) * n].iter().fold(0.0_f64, |a, &x| a.max(x.abs())))
        .collect();
    Ok(Tensor::from_parts(vec![m], out))
}

pub fn col_max_norms(t: &Tensor) -> Result<Tensor> {
    let (m, n) = t.matrix_dims()?;
    let mut out = vec![0.0_f64; n];
    for i in 0..m {
        for (o, &x) in out.iter_mut().zip(&t.data[i * n..(i + 1) * n]) {
            *o = o.max(x.abs());
        }
    }
    Ok(Tensor::from_parts(vec![n], out))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(t: &Tensor) -> Result<Tensor> {
    let (m, n) = t.matrix_dims()?;
    let mut out = t.data.clone();
    for i in 0..m {
        softmax_in_place(&mut out[i * n..(i + 1) * n]);
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x));
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = 1.0 / sum;
    for x in row.iter_mut() {
        *x *= inv;
    }
}

/// `sign(x) * min(|x|, c)` elementwise.
pub fn clip_elementwise(t: &Tensor, c: f64) -> Result<Tensor> {
    if c.is_nan() || c <= 0.0 {
        return Err(Error::Domain(format!("clip threshold must be positive, got {c}")));
    }
    Ok(t.map(|x| x.clamp(-c, c)))
}

/// Normal draws `mean + std * z` with `z` from [`SeededRng::standard_normal`],
/// filled in row-major order.
pub fn seeded_normal(shape: &[usize], mean: f64, std: f64, rng: &mut SeededRng) -> Result<Tensor> {
    if std.is_nan() || std < 0.0 {
        return Err(Error::Domain(format!("std must be non-negative, got {std}")));
    }
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| mean + std * rng.standard_normal()).collect();
    Tensor::new(shape.to_vec(), data)
}

// Slice kernels used by the transformer. All accumulate into `out` and sum
// over the shared dimension in ascending order.

/// out[m×n] += a[m×k] · b[k×n]
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let o = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let br = &b[p * n..(p + 1) * n];
            for (oj, &bj) in o.iter_mut().zip(br) {
                *oj += aip * bj;
            }
        }
    }
}

/// out[m×n] += a[m×k] · b[n×k]ᵀ
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let br = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&x, &y) in ar.iter().zip(br) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// out[m×n] += a[k×m]ᵀ · b[k×n]
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let ar = &a[p * m..(p + 1) * m];
        let br = &b[p * n..(p + 1) * n];
        for (i, &aip) in ar.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let o = &mut out[i * n..(i + 1) * n];
            for (oj, &bj) in o.iter_mut().zip(br) {
                *oj += aip * bj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_matrix(rng: &mut SeededRng, m: usize, n: usize) -> Tensor {
        seeded_normal(&[m, n], 0.0, 1.0, rng).unwrap()
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![1.0; 3]),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(Tensor::new(vec![1], vec![f64::NAN]), Err(Error::Domain(_))));
        assert!(matches!(
            Tensor::new(vec![1], vec![f64::INFINITY]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(Tensor::new(vec![0, 2], vec![]), Err(Error::Dimension(_))));
    }

    #[test]
    fn matmul_identity_and_dot() {
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Tensor::eye(2), &a).unwrap(), a);
        let r = matmul(
            &Tensor::from_rows(&[&[1.0, 2.0]]),
            &Tensor::from_rows(&[&[3.0], &[4.0]]),
        )
        .unwrap();
        assert_eq!(r.data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = SeededRng::new(11);
        let a = random_matrix(&mut rng, 5, 4);
        let b = random_matrix(&mut rng, 4, 3);
        let c = matmul(&a, &b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for p in 0..4 {
                    s += a.get2(i, p) * b.get2(p, j);
                }
                assert!((c.get2(i, j) - s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &a), Err(Error::Dimension(_))));
        assert!(matches!(matmul(&Tensor::zeros(&[3]), &a), Err(Error::Dimension(_))));
    }

    #[test]
    fn transposed_kernels_agree_with_nn() {
        let mut rng = SeededRng::new(5);
        let a = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 4, 5);
        let c = matmul(&a, &b).unwrap();
        let mut nt = vec![0.0; 15];
        gemm_nt(a.data(), b.transpose().unwrap().data(), &mut nt, 3, 4, 5);
        let mut tn = vec![0.0; 15];
        gemm_tn(a.transpose().unwrap().data(), b.data(), &mut tn, 3, 4, 5);
        for ((x, y), z) in c.data().iter().zip(&nt).zip(&tn) {
            assert!((x - y).abs() < 1e-12 && (x - z).abs() < 1e-12);
        }
    }

    #[test]
    fn max_norm_cases() {
        assert_eq!(Tensor::from_rows(&[&[1.0, -3.0], &[2.0, 0.0]]).max_norm().unwrap(), 3.0);
        assert_eq!(Tensor::zeros(&[3, 3]).max_norm().unwrap(), 0.0);
        assert_eq!(Tensor::from_rows(&[&[-5.0]]).max_norm().unwrap(), 5.0);
        assert!(matches!(max_norm(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn l2_norm_cases() {
        assert_eq!(Tensor::from_vec(vec![3.0, 4.0]).unwrap().l2_norm().unwrap(), 5.0);
        assert!((Tensor::eye(2).l2_norm().unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(l2_norm(&[]), Err(Error::Domain(_))));

        let mut rng = SeededRng::new(2);
        let v = seeded_normal(&[100], 0.0, 1.0, &mut rng).unwrap();
        let mut acc = 0.0;
        for i in 0..100 {
            acc += v.data()[i] * v.data()[i];
        }
        assert!((v.l2_norm().unwrap() - acc.sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn row_and_col_max_norms() {
        let m = Tensor::from_rows(&[&[2.0, -1.0], &[0.5, 4.0]]);
        assert_eq!(row_max_norms(&m).unwrap().data(), &[2.0, 4.0]);
        assert_eq!(col_max_norms(&m).unwrap().data(), &[2.0, 4.0]);
        assert_eq!(row_max_norms(&Tensor::zeros(&[3, 3])).unwrap().data(), &[0.0; 3]);
        assert_eq!(
            col_max_norms(&Tensor::from_rows(&[&[1.0], &[-7.0]])).unwrap().data(),
            &[7.0]
        );
        assert!(matches!(row_max_norms(&Tensor::zeros(&[4])), Err(Error::Dimension(_))));
        assert!(matches!(
            col_max_norms(&Tensor::zeros(&[2, 2, 2])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn row_max_norms_match_scalar_loop() {
        let mut rng = SeededRng::new(8);
        let m = random_matrix(&mut rng, 8, 8);
        let r = row_max_norms(&m).unwrap();
        for i in 0..8 {
            let mut best = 0.0_f64;
            for j in 0..8 {
                if m.get2(i, j).abs() > best {
                    best = m.get2(i, j).abs();
                }
            }
            assert!((r.data()[i] - best).abs() <= 1e-15);
        }
    }

    #[test]
    fn col_max_norms_transpose_duality() {
        let mut rng = SeededRng::new(9);
        let m = random_matrix(&mut rng, 6, 3);
        assert_eq!(
            col_max_norms(&m).unwrap(),
            row_max_norms(&m.transpose().unwrap()).unwrap()
        );
    }

    #[test]
    fn softmax_cases() {
        let s = softmax_rows(&Tensor::from_rows(&[&[0.0, 0.0]])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&Tensor::from_rows(&[&[1000.0, 0.0]])).unwrap();
        assert!((s.data()[0] - 1.0).abs() <= 1e-12 && s.data()[1].abs() <= 1e-12);
        let mut rng = SeededRng::new(4);
        let s = softmax_rows(&random_matrix(&mut rng, 4, 4)).unwrap();
        for i in 0..4 {
            assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn clip_cases() {
        let t = Tensor::from_vec(vec![2.5, -0.3, -1.7]).unwrap();
        assert_eq!(clip_elementwise(&t, 1.0).unwrap().data(), &[1.0, -0.3, -1.0]);
        let small = Tensor::from_vec(vec![0.2, -0.9, 1.0]).unwrap();
        assert_eq!(clip_elementwise(&small, 1.0).unwrap(), small);
        assert!(matches!(clip_elementwise(&t, 0.0), Err(Error::Domain(_))));
        assert!(matches!(clip_elementwise(&t, -1.0), Err(Error::Domain(_))));

        let mut rng = SeededRng::new(12);
        let r = random_matrix(&mut rng, 7, 9);
        let c = clip_elementwise(&r, 0.5).unwrap();
        assert!(c.max_norm().unwrap() <= 0.5);
        for (&x, &y) in r.data().iter().zip(c.data()) {
            #[allow(clippy::manual_clamp)]
            let expect = if x > 0.5 {
                0.5
            } else if x < -0.5 {
                -0.5
            } else {
                x
            };
            assert_eq!(y, expect);
        }
    }

    #[test]
    fn seeded_normal_cases() {
        let mut rng = SeededRng::new(1);
        let t = seeded_normal(&[4, 4], 2.5, 0.0, &mut rng).unwrap();
        assert!(t.data().iter().all(|&x| x == 2.5));
        assert!(matches!(
            seeded_normal(&[2], 0.0, -1.0, &mut rng),
            Err(Error::Domain(_))
        ));

        let a = seeded_normal(&[64], 0.0, 1.0, &mut SeededRng::new(99)).unwrap();
        let b = seeded_normal(&[64], 0.0, 1.0, &mut SeededRng::new(99)).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn seeded_normal_moments() {
        let n = 100_000;
        let t = seeded_normal(&[n], 0.0, 1.0, &mut SeededRng::new(2024)).unwrap();
        let mean = t.data().iter().sum::<f64>() / n as f64;
        let var = t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        (1usize..6, 1usize..6).prop_flat_map(|(m, n)| {
            prop::collection::vec(-100.0f64..100.0, m * n).prop_map(move |d| Tensor::new(vec![m, n], d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn norm_sandwich(t in arb_tensor()) {
            let mx = t.max_norm().unwrap();
            let l2 = t.l2_norm().unwrap();
            prop_assert!(mx <= l2 * (1.0 + 1e-15));
            prop_assert!(l2 <= (t.numel() as f64).sqrt() * mx * (1.0 + 1e-15));
        }

        #[test]
        fn softmax_rows_are_distributions(t in arb_tensor()) {
            let s = softmax_rows(&t).unwrap();
            let (m, _) = s.matrix_dims().unwrap();
            for i in 0..m {
                prop_assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(s.row(i).iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
        }

        #[test]
        fn clip_is_idempotent(t in arb_tensor(), c in 0.01f64..50.0) {
            let once = clip_elementwise(&t, c).unwrap();
            prop_assert_eq!(clip_elementwise(&once, c).unwrap(), once);
        }

        #[test]
        fn max_norm_positively_homogeneous(t in arb_tensor(), alpha in 0.001f64..1000.0) {
            let lhs = t.scale(alpha).max_norm().unwrap();
            let rhs = alpha * t.max_norm().unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }

        #[test]
        fn kernels_are_deterministic(t in arb_tensor()) {
            let tt = t.transpose().unwrap();
            let a = matmul(&t, &tt).unwrap();
            let b = matmul(&t, &tt).unwrap();
            prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
