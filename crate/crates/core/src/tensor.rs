//! Dense row-major tensors with deterministic numerics.
//!
//! Accumulation order is fixed (sequential over the contraction axis) in every
//! reduction, so results are bit-identical across runs and thread counts.
//! Parallelism, where used, lives above this layer and only ever spans
//! independent rows or queries.
//!
//! Checked mode: in debug builds every op result is scanned for NaN/inf and
//! panics with the op name. Release builds skip the scan; callers that need an
//! explicit check use [`Tensor::all_finite`].

use std::sync::Arc;

use thiserror::Error;

use crate::num::Scalar;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} implies {expected} elements, got {actual}")]
    BadLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("axis {axis} out of range for shape {shape:?}")]
    BadAxis { axis: usize, shape: Vec<usize> },
    #[error("input is not a probability distribution: {reason}")]
    NotADistribution { reason: String },
    #[error("index {index} out of range for extent {extent}")]
    IndexOutOfRange { index: usize, extent: usize },
}

/// Dense tensor. Cloning is cheap: the buffer is shared until mutated.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F: Scalar> {
    shape: Vec<usize>,
    data: Arc<Vec<F>>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::BadLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    /// Like [`Tensor::new`] but panics on length mismatch; for internal sites
    /// where the shape is correct by construction.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<F>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: Arc::new(vec![F::zero(); n]),
        }
    }

    pub fn scalar(value: F) -> Self {
        Self {
            shape: vec![1],
            data: Arc::new(vec![value]),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    /// Mutable access; copies the buffer first if it is shared.
    pub fn data_mut(&mut self) -> &mut [F] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Number of rows/cols when viewed as a matrix (rank-2 only).
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[F] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> F {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert element type (used to cross-check f32 runs against f64).
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| G::of_f64(v.as_f64())).collect(),
        )
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Tensor<F> {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Max |a-b| / max(|a|,|b|,floor) over elements; shapes must match.
    pub fn max_rel_diff(&self, other: &Tensor<F>, floor: f64) -> f64 {
        assert_eq!(self.shape, other.shape, "max_rel_diff shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| crate::num::rel_diff(a.as_f64(), b.as_f64(), floor))
            .fold(0.0, f64::max)
    }
}

#[cfg(debug_assertions)]
fn check_finite<F: Scalar>(op: &'static str, t: &Tensor<F>) {
    // multiplying by zero maps any non-finite value to NaN, so one
    // vectorizable pass detects them without per-element branching
    let mut acc = F::zero();
    for &v in t.data() {
        acc += v * F::zero();
    }
    assert!(
        acc == F::zero(),
        "checked mode: non-finite value after {op}"
    );
}

#[cfg(not(debug_assertions))]
fn check_finite<F: Scalar>(_op: &'static str, _t: &Tensor<F>) {}

fn expect_matrix<F: Scalar>(op: &'static str, t: &Tensor<F>) -> Result<(usize, usize), TensorError> {
    if t.shape().len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op,
            left: t.shape().to_vec(),
            right: vec![],
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// Matrix product a[m,k] . b[k,n]. Accumulation over k is sequential in
/// ascending k for every output element.
pub fn matmul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
    let (m, ka) = expect_matrix("matmul", a)?;
    let (kb, n) = expect_matrix("matmul", b)?;
    if ka != kb {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![F::zero(); m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * ka..(i + 1) * ka];
        let orow = &mut out[i * n..(i + 1) * n];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &bd[k * n..(k + 1) * n];
            for (o, &bkj) in orow.iter_mut().zip(brow.iter()) {
                *o += aik * bkj;
            }
        }
    }
    let t = Tensor::from_parts(vec![m, n], out);
    check_finite("matmul", &t);
    Ok(t)
}

/// a[m,k] . b[n,k]^T -> [m,n]. Works on a transposed copy of `b` so the
/// inner loop runs along contiguous output; each output element still
/// accumulates strictly in ascending k.
pub fn matmul_nt<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
    let (m, ka) = expect_matrix("matmul_nt", a)?;
    let (n, kb) = expect_matrix("matmul_nt", b)?;
    if ka != kb {
        return Err(TensorError::ShapeMismatch {
            op: "matmul_nt",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let k = ka;
    let bd = b.data();
    let mut bt = vec![F::zero(); k * n];
    for j in 0..n {
        let brow = &bd[j * k..(j + 1) * k];
        for (kk, &v) in brow.iter().enumerate() {
            bt[kk * n + j] = v;
        }
    }
    let ad = a.data();
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let btrow = &bt[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(btrow.iter()) {
                *o += aik * bv;
            }
        }
    }
    let t = Tensor::from_parts(vec![m, n], out);
    check_finite("matmul_nt", &t);
    Ok(t)
}

/// a[m,k]^T . b[m,n] -> [k,n]. Output rows are produced one at a time so the
/// working set stays in cache; every element accumulates in ascending row
/// order of a/b.
pub fn matmul_tn<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
    let (ma, k) = expect_matrix("matmul_tn", a)?;
    let (mb, n) = expect_matrix("matmul_tn", b)?;
    if ma != mb {
        return Err(TensorError::ShapeMismatch {
            op: "matmul_tn",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let ad = a.data();
    let mut out = vec![F::zero(); k * n];
    for j in 0..k {
        let orow = &mut out[j * n..(j + 1) * n];
        for i in 0..ma {
            let aij = ad[i * k + j];
            let brow = b.row(i);
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += aij * bv;
            }
        }
    }
    let t = Tensor::from_parts(vec![k, n], out);
    check_finite("matmul_tn", &t);
    Ok(t)
}

pub fn dot_slices<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut s = F::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        s += *x * *y;
    }
    s
}

pub fn dot<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<F, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "dot",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(dot_slices(a.data(), b.data()))
}

pub fn add<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "add",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let out: Vec<F> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x + y)
        .collect();
    let t = Tensor::from_parts(a.shape().to_vec(), out);
    check_finite("add", &t);
    Ok(t)
}

pub fn scale<F: Scalar>(a: &Tensor<F>, c: F) -> Tensor<F> {
    let t = a.map(|v| v * c);
    check_finite("scale", &t);
    t
}

/// Add a [n] bias to every row of a [m,n] matrix.
pub fn add_row_broadcast<F: Scalar>(a: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>, TensorError> {
    let (m, n) = expect_matrix("add_row_broadcast", a)?;
    if bias.shape() != [n] {
        return Err(TensorError::ShapeMismatch {
            op: "add_row_broadcast",
            left: a.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    let bd = bias.data();
    let mut out = a.data().to_vec();
    for i in 0..m {
        for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(bd.iter()) {
            *o += bv;
        }
    }
    let t = Tensor::from_parts(vec![m, n], out);
    check_finite("add_row_broadcast", &t);
    Ok(t)
}

/// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
/// The same form is used by the gradient so the two stay self-consistent.
pub fn gelu<F: Scalar>(x: F) -> F {
    let c = F::of_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = F::of_f64(0.044715);
    let u = c * (x + a * x * x * x);
    F::of_f64(0.5) * x * (F::one() + u.tanh())
}

/// d gelu / dx for the tanh approximation.
pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::of_f64(0.797_884_560_802_865_4);
    let a = F::of_f64(0.044715);
    let half = F::of_f64(0.5);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = F::one() - t * t;
    let du = c * (F::one() + F::of_f64(3.0) * a * x * x);
    half * (F::one() + t) + half * x * sech2 * du
}

pub fn gelu_tensor<F: Scalar>(a: &Tensor<F>) -> Tensor<F> {
    let t = a.map(gelu);
    check_finite("gelu", &t);
    t
}

/// Softmax along `axis` with max-subtraction. Every slice along the axis sums
/// to 1 and keeps its argmax.
pub fn softmax<F: Scalar>(a: &Tensor<F>, axis: usize) -> Result<Tensor<F>, TensorError> {
    let shape = a.shape().to_vec();
    if axis >= shape.len() {
        return Err(TensorError::BadAxis { axis, shape });
    }
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = a.data().to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis_len * inner + i;
            let mut maxv = F::neg_infinity();
            for j in 0..axis_len {
                maxv = maxv.max(out[base + j * inner]);
            }
            let mut sum = F::zero();
            for j in 0..axis_len {
                let e = (out[base + j * inner] - maxv).exp();
                out[base + j * inner] = e;
                sum += e;
            }
            for j in 0..axis_len {
                out[base + j * inner] = out[base + j * inner] / sum;
            }
        }
    }
    let t = Tensor::from_parts(shape, out);
    check_finite("softmax", &t);
    Ok(t)
}

/// Stable log-softmax of a single row.
pub fn log_softmax_row<F: Scalar>(row: &[F]) -> Vec<F> {
    let maxv = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let mut sum = F::zero();
    for &v in row {
        sum += (v - maxv).exp();
    }
    let lse = maxv + sum.ln();
    row.iter().map(|&v| v - lse).collect()
}

/// Row-wise layer norm: zero mean, unit variance (population), then affine.
pub fn layer_norm<F: Scalar>(
    a: &Tensor<F>,
    gain: &Tensor<F>,
    bias: &Tensor<F>,
    eps: F,
) -> Result<Tensor<F>, TensorError> {
    let (m, n) = expect_matrix("layer_norm", a)?;
    if gain.shape() != [n] || bias.shape() != [n] {
        return Err(TensorError::ShapeMismatch {
            op: "layer_norm",
            left: a.shape().to_vec(),
            right: gain.shape().to_vec(),
        });
    }
    let mut out = vec![F::zero(); m * n];
    let gd = gain.data();
    let bd = bias.data();
    let inv_n = F::one() / F::of_f64(n as f64);
    for i in 0..m {
        let row = a.row(i);
        let mut mean = F::zero();
        for &v in row {
            mean += v;
        }
        mean = mean * inv_n;
        let mut var = F::zero();
        for &v in row {
            let d = v - mean;
            var += d * d;
        }
        var = var * inv_n;
        let inv_std = F::one() / (var + eps).sqrt();
        let orow = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            orow[j] = (row[j] - mean) * inv_std * gd[j] + bd[j];
        }
    }
    let t = Tensor::from_parts(vec![m, n], out);
    check_finite("layer_norm", &t);
    Ok(t)
}

/// Shannon entropy in nats of a probability vector; 0 ln 0 := 0.
pub fn entropy<F: Scalar>(p: &Tensor<F>) -> Result<f64, TensorError> {
    let mut sum = 0.0;
    for &v in p.data() {
        let v = v.as_f64();
        if v < -1e-9 {
            return Err(TensorError::NotADistribution {
                reason: format!("negative entry {v}"),
            });
        }
        sum += v;
    }
    if (sum - 1.0).abs() > 1e-4 {
        return Err(TensorError::NotADistribution {
            reason: format!("entries sum to {sum}"),
        });
    }
    let mut h = 0.0;
    for &v in p.data() {
        let v = v.as_f64();
        if v > 0.0 {
            h -= v * v.ln();
        }
    }
    Ok(h)
}

/// Index of the maximum element; ties resolve to the lowest index.
pub fn argmax<F: Scalar>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Indices of the k largest elements, descending; ties resolve to the lower
/// index so results are deterministic.
pub fn top_k<F: Scalar>(values: &[F], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let k = k.min(values.len());
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// 1-based rank of `target` when sorting by value descending; among equal
/// values, lower indices rank first.
pub fn rank_of<F: Scalar>(values: &[F], target: usize) -> usize {
    let tv = values[target];
    let mut rank = 1;
    for (i, &v) in values.iter().enumerate() {
        if i == target {
            continue;
        }
        if v > tv || (v == tv && i < target) {
            rank += 1;
        }
    }
    rank
}

/// Negative log-likelihood of `target` under softmax(logits_row).
pub fn cross_entropy<F: Scalar>(logits_row: &[F], target: usize) -> Result<F, TensorError> {
    if target >= logits_row.len() {
        return Err(TensorError::IndexOutOfRange {
            index: target,
            extent: logits_row.len(),
        });
    }
    Ok(-log_softmax_row(logits_row)[target])
}

/// Gather rows of `table` ([v,d]) at `ids` -> [len(ids), d].
pub fn embedding_gather<F: Scalar>(table: &Tensor<F>, ids: &[usize]) -> Result<Tensor<F>, TensorError> {
    let (v, d) = expect_matrix("embedding_gather", table)?;
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= v {
            return Err(TensorError::IndexOutOfRange { index: id, extent: v });
        }
        out.extend_from_slice(table.row(id));
    }
    Ok(Tensor::from_parts(vec![ids.len(), d], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, stream};
    use rand::Rng as _;

    fn seeded_matrix(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
        let mut rng = rng_for(seed, stream::INIT);
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        Tensor::from_parts(vec![rows, cols], data)
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = matmul(&eye, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_matches_naive_triple_loop_oracle() {
        let a = seeded_matrix(8, 8, 11);
        let b = seeded_matrix(8, 8, 12);
        let c = matmul(&a, &b).unwrap();
        // independent naive i-j-k oracle
        for i in 0..8 {
            for j in 0..8 {
                let mut s = 0.0;
                for k in 0..8 {
                    s += a.data()[i * 8 + k] * b.data()[k * 8 + j];
                }
                assert!((c.data()[i * 8 + j] - s).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f32>::zeros(vec![2, 3]);
        let b = Tensor::<f32>::zeros(vec![2, 3]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "got: {msg}");
    }

    #[test]
    fn matmul_variants_agree() {
        let a = seeded_matrix(5, 7, 1);
        let b = seeded_matrix(7, 4, 2);
        let c = matmul(&a, &b).unwrap();
        // NT route: a . (b^T)^T via explicit transpose of b
        let mut bt = vec![0.0; 7 * 4];
        for i in 0..7 {
            for j in 0..4 {
                bt[j * 7 + i] = b.data()[i * 4 + j];
            }
        }
        let btt = Tensor::from_parts(vec![4, 7], bt);
        let c2 = matmul_nt(&a, &btt).unwrap();
        assert!(c.max_rel_diff(&c2, 1e-12) < 1e-12);
        // TN route
        let mut at = vec![0.0; 5 * 7];
        for i in 0..5 {
            for j in 0..7 {
                at[j * 5 + i] = a.data()[i * 7 + j];
            }
        }
        let att = Tensor::from_parts(vec![7, 5], at);
        let c3 = matmul_tn(&att, &b).unwrap();
        assert!(c.max_rel_diff(&c3, 1e-12) < 1e-12);
    }

    #[test]
    fn softmax_uniform_logits() {
        let x = Tensor::new(vec![4], vec![0.5f64; 4]).unwrap();
        let s = softmax(&x, 0).unwrap();
        for &v in s.data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_large_logit_is_one_hot() {
        let x = Tensor::new(vec![3], vec![0.0f64, 200.0, 0.0]).unwrap();
        let s = softmax(&x, 0).unwrap();
        assert!((s.data()[1] - 1.0).abs() < 1e-9);
        assert!(s.data()[0] < 1e-9 && s.data()[2] < 1e-9);
    }

    #[test]
    fn softmax_matches_exp_normalize_oracle() {
        let x = Tensor::new(vec![3], vec![0.0f64, 1.0, 2.0]).unwrap();
        let s = softmax(&x, 0).unwrap();
        let exps: Vec<f64> = [0.0f64, 1.0, 2.0].iter().map(|v| v.exp()).collect();
        let z: f64 = exps.iter().sum();
        for (got, want) in s.data().iter().zip(exps.iter().map(|e| e / z)) {
            assert!((got - want).abs() <= 1e-9);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_keep_argmax() {
        let a = seeded_matrix(6, 9, 33);
        let s = softmax(&a, 1).unwrap();
        for i in 0..6 {
            let sum: f64 = s.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert_eq!(argmax(s.row(i)), argmax(a.row(i)));
        }
    }

    #[test]
    fn softmax_axis_zero() {
        let a = seeded_matrix(4, 3, 7);
        let s = softmax(&a, 0).unwrap();
        for j in 0..3 {
            let sum: f64 = (0..4).map(|i| s.data()[i * 3 + j]).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_constant_row_collapses_to_zero() {
        let x = Tensor::new(vec![1, 4], vec![3.0f64; 4]).unwrap();
        let gain = Tensor::new(vec![4], vec![1.0; 4]).unwrap();
        let bias = Tensor::zeros(vec![4]);
        let y = layer_norm(&x, &gain, &bias, 1e-5).unwrap();
        for &v in y.data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_standardized_row_unchanged() {
        // mean 0, population variance 1
        let x = Tensor::new(vec![1, 2], vec![1.0f64, -1.0]).unwrap();
        let gain = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let bias = Tensor::zeros(vec![2]);
        let y = layer_norm(&x, &gain, &bias, 1e-12).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-5);
        assert!((y.data()[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_matches_formula_oracle() {
        let x = seeded_matrix(1, 8, 5);
        let gain = Tensor::new(vec![8], vec![1.3; 8]).unwrap();
        let bias = Tensor::new(vec![8], vec![-0.2; 8]).unwrap();
        let eps = 1e-5;
        let y = layer_norm(&x, &gain, &bias, eps).unwrap();
        let row = x.row(0);
        let mean: f64 = row.iter().sum::<f64>() / 8.0;
        let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        for j in 0..8 {
            let want = (row[j] - mean) / (var + eps).sqrt() * 1.3 - 0.2;
            assert!((y.data()[j] - want).abs() <= 1e-6);
        }
    }

    #[test]
    fn entropy_one_hot_is_zero() {
        let p = Tensor::new(vec![4], vec![0.0f64, 1.0, 0.0, 0.0]).unwrap();
        assert!(entropy(&p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn entropy_uniform_is_ln_v() {
        let p = Tensor::new(vec![5], vec![0.2f64; 5]).unwrap();
        assert!((entropy(&p).unwrap() - 5.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn entropy_hand_value() {
        let p = Tensor::new(vec![3], vec![0.5f64, 0.25, 0.25]).unwrap();
        let h = entropy(&p).unwrap();
        assert!((h - 1.0397).abs() < 1e-4);
        // formula oracle
        let want = -(0.5f64 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
        assert!((h - want).abs() < 1e-12);
    }

    #[test]
    fn entropy_rejects_non_distribution() {
        let p = Tensor::new(vec![2], vec![0.9f64, 0.5]).unwrap();
        assert!(matches!(
            entropy(&p),
            Err(TensorError::NotADistribution { .. })
        ));
    }

    #[test]
    fn top_k_and_rank_are_deterministic_under_ties() {
        let v = [1.0f64, 3.0, 3.0, 2.0];
        assert_eq!(top_k(&v, 3), vec![1, 2, 3]);
        assert_eq!(rank_of(&v, 2), 2);
        assert_eq!(rank_of(&v, 1), 1);
        assert_eq!(rank_of(&v, 0), 4);
    }

    #[test]
    fn cross_entropy_matches_log_softmax() {
        let row = [0.3f64, -1.0, 2.0];
        let ce = cross_entropy(&row, 2).unwrap();
        let ls = log_softmax_row(&row);
        assert!((ce + ls[2]).abs() < 1e-12);
    }

    #[test]
    fn gather_rows() {
        let table = Tensor::new(vec![3, 2], vec![0.0f64, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let g = embedding_gather(&table, &[2, 0]).unwrap();
        assert_eq!(g.data(), &[4.0, 5.0, 0.0, 1.0]);
        assert!(embedding_gather(&table, &[7]).is_err());
    }

    #[test]
    fn gelu_gradient_matches_finite_differences() {
        for &x in &[-2.0f64, -0.5, 0.0, 0.3, 1.7] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - fd).abs() < 1e-8, "x={x}");
        }
    }
}
