//! Reverse-mode automatic differentiation over tensors.
//!
//! A forward pass appends nodes to a [`Tape`]; [`Tape::backward`] walks the
//! nodes in reverse and produces exact analytic gradients for every leaf.
//! Gradient accumulation order is fixed by node index, so gradients are
//! bit-identical across runs.

use thiserror::Error;

use crate::num::Scalar;
use crate::tensor::{self, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("backward target {0} is not on the tape (no forward recorded)")]
    NoSuchNode(usize),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op<F: Scalar> {
    Leaf,
    /// a[m,k] . b[k,n]
    MatMul { a: NodeId, b: NodeId },
    /// a[m,k] . b[n,k]^T
    MatMulNt { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    /// bias ([n]) broadcast over rows of a ([m,n])
    AddRow { a: NodeId, bias: NodeId },
    Scale { a: NodeId, c: F },
    Gelu { a: NodeId },
    /// row-wise layer norm with affine parameters
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: F },
    /// softmax over row prefixes: row i spans columns 0..=i
    CausalSoftmax { scores: NodeId },
    GatherRows { table: NodeId, ids: Vec<usize> },
    /// [m,n] -> [1,n]
    RowSlice { a: NodeId, row: usize },
    ConcatCols { parts: Vec<NodeId> },
    /// copy of `a` with row `row` replaced by vector `v` ([n])
    OverwriteRow { a: NodeId, row: usize, v: NodeId },
    /// scalar: mean over (row, target) pairs of -log softmax(logits[row])[target]
    SeqNll { logits: NodeId, targets: Vec<(usize, usize)> },
    /// scalar: log softmax(logits[0])[idx] of a [1,n] row
    LogSoftmaxPick { logits: NodeId, idx: usize },
}

struct Node<F: Scalar> {
    value: Tensor<F>,
    op: Op<F>,
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients<F: Scalar> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul { a, b }))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let v = tensor::matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMulNt { a, b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let v = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let neg = tensor::scale(self.value(b), -F::one());
        let v = tensor::add(self.value(a), &neg)?;
        Ok(self.push(v, Op::Sub { a, b }))
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let v = tensor::add_row_broadcast(self.value(a), self.value(bias))?;
        Ok(self.push(v, Op::AddRow { a, bias }))
    }

    pub fn scale(&mut self, a: NodeId, c: F) -> NodeId {
        let v = tensor::scale(self.value(a), c);
        self.push(v, Op::Scale { a, c })
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = tensor::gelu_tensor(self.value(a));
        self.push(v, Op::Gelu { a })
    }

    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: F,
    ) -> Result<NodeId, TensorError> {
        let v = tensor::layer_norm(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(v, Op::LayerNorm { x, gain, bias, eps }))
    }

    pub fn causal_softmax(&mut self, scores: NodeId) -> Result<NodeId, TensorError> {
        let s = self.value(scores);
        let (m, n) = (s.shape()[0], s.shape()[1]);
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let prefix = (i + 1).min(n);
            let row = s.row(i);
            let mut maxv = F::neg_infinity();
            for &v in &row[..prefix] {
                maxv = maxv.max(v);
            }
            let mut sum = F::zero();
            for j in 0..prefix {
                let e = (row[j] - maxv).exp();
                out[i * n + j] = e;
                sum += e;
            }
            for j in 0..prefix {
                out[i * n + j] = out[i * n + j] / sum;
            }
        }
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.push(v, Op::CausalSoftmax { scores }))
    }

    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, TensorError> {
        let v = tensor::embedding_gather(self.value(table), ids)?;
        Ok(self.push(
            v,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn row_slice(&mut self, a: NodeId, row: usize) -> Result<NodeId, TensorError> {
        let t = self.value(a);
        if row >= t.rows() {
            return Err(TensorError::IndexOutOfRange {
                index: row,
                extent: t.rows(),
            });
        }
        let v = Tensor::new(vec![1, t.cols()], t.row(row).to_vec())?;
        Ok(self.push(v, Op::RowSlice { a, row }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        assert!(!parts.is_empty());
        let m = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let v = Tensor::new(vec![m, total], out)?;
        Ok(self.push(
            v,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn overwrite_row(&mut self, a: NodeId, row: usize, v: NodeId) -> Result<NodeId, TensorError> {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        if row >= m {
            return Err(TensorError::IndexOutOfRange { index: row, extent: m });
        }
        if self.value(v).shape() != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "overwrite_row",
                left: t.shape().to_vec(),
                right: self.value(v).shape().to_vec(),
            });
        }
        let mut out = t.data().to_vec();
        out[row * n..(row + 1) * n].copy_from_slice(self.value(v).data());
        let val = Tensor::new(vec![m, n], out)?;
        Ok(self.push(val, Op::OverwriteRow { a, row, v }))
    }

    /// Mean of -log softmax(logits[row])[target] over the given pairs.
    pub fn seq_nll(&mut self, logits: NodeId, targets: &[(usize, usize)]) -> Result<NodeId, TensorError> {
        assert!(!targets.is_empty());
        let lg = self.value(logits);
        let mut total = F::zero();
        for &(row, tid) in targets {
            if row >= lg.rows() {
                return Err(TensorError::IndexOutOfRange {
                    index: row,
                    extent: lg.rows(),
                });
            }
            total += tensor::cross_entropy(lg.row(row), tid)?;
        }
        let mean = total / F::of_f64(targets.len() as f64);
        let v = Tensor::scalar(mean);
        Ok(self.push(
            v,
            Op::SeqNll {
                logits,
                targets: targets.to_vec(),
            },
        ))
    }

    /// log softmax(logits)[idx] of a [1,n] logits row, as a scalar node.
    pub fn log_softmax_pick(&mut self, logits: NodeId, idx: usize) -> Result<NodeId, TensorError> {
        let lg = self.value(logits);
        if lg.rows() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "log_softmax_pick",
                left: lg.shape().to_vec(),
                right: vec![1, lg.cols()],
            });
        }
        if idx >= lg.cols() {
            return Err(TensorError::IndexOutOfRange {
                index: idx,
                extent: lg.cols(),
            });
        }
        let ls = tensor::log_softmax_row(lg.row(0));
        let v = Tensor::scalar(ls[idx]);
        Ok(self.push(v, Op::LogSoftmaxPick { logits, idx }))
    }

    /// Reverse pass from a scalar loss node; returns per-node gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<F>, TapeError> {
        if loss.0 >= self.nodes.len() {
            return Err(TapeError::NoSuchNode(loss.0));
        }
        let loss_val = &self.nodes[loss.0].value;
        if loss_val.len() != 1 {
            return Err(TapeError::NonScalarLoss(loss_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(loss_val.shape().to_vec(), vec![F::one()])?);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &Tensor<F>,
        grads: &mut [Option<Tensor<F>>],
    ) -> Result<(), TapeError> {
        fn accum<F: Scalar>(
            grads: &mut [Option<Tensor<F>>],
            id: NodeId,
            delta: Tensor<F>,
        ) -> Result<(), TapeError> {
            grads[id.0] = Some(match grads[id.0].take() {
                None => delta,
                Some(cur) => tensor::add(&cur, &delta)?,
            });
            Ok(())
        }

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let da = tensor::matmul_nt(g, self.value(*b))?;
                let db = tensor::matmul_tn(self.value(*a), g)?;
                accum(grads, *a, da)?;
                accum(grads, *b, db)?;
            }
            Op::MatMulNt { a, b } => {
                let da = tensor::matmul(g, self.value(*b))?;
                let db = tensor::matmul_tn(g, self.value(*a))?;
                accum(grads, *a, da)?;
                accum(grads, *b, db)?;
            }
            Op::Add { a, b } => {
                accum(grads, *a, g.clone())?;
                accum(grads, *b, g.clone())?;
            }
            Op::Sub { a, b } => {
                accum(grads, *a, g.clone())?;
                accum(grads, *b, tensor::scale(g, -F::one()))?;
            }
            Op::AddRow { a, bias } => {
                accum(grads, *a, g.clone())?;
                let (m, n) = (g.rows(), g.cols());
                let mut db = vec![F::zero(); n];
                for r in 0..m {
                    for (acc, &gv) in db.iter_mut().zip(g.row(r).iter()) {
                        *acc += gv;
                    }
                }
                accum(grads, *bias, Tensor::new(vec![n], db)?)?;
            }
            Op::Scale { a, c } => {
                accum(grads, *a, tensor::scale(g, *c))?;
            }
            Op::Gelu { a } => {
                let x = self.value(*a);
                let dx: Vec<F> = x
                    .data()
                    .iter()
                    .zip(g.data().iter())
                    .map(|(&xv, &gv)| gv * tensor::gelu_grad(xv))
                    .collect();
                accum(grads, *a, Tensor::new(x.shape().to_vec(), dx)?)?;
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let (m, n) = (xv.rows(), xv.cols());
                let inv_n = F::one() / F::of_f64(n as f64);
                let mut dx = vec![F::zero(); m * n];
                let mut dgain = vec![F::zero(); n];
                let mut dbias = vec![F::zero(); n];
                for r in 0..m {
                    let row = xv.row(r);
                    let grow = g.row(r);
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
                    let inv_std = F::one() / (var + *eps).sqrt();
                    // xhat_j = (x_j - mean) * inv_std ; ghat_j = g_j * gain_j
                    let mut mean_ghat = F::zero();
                    let mut mean_ghat_xhat = F::zero();
                    let mut xhat = vec![F::zero(); n];
                    let mut ghat = vec![F::zero(); n];
                    for j in 0..n {
                        xhat[j] = (row[j] - mean) * inv_std;
                        ghat[j] = grow[j] * gv.data()[j];
                        mean_ghat += ghat[j];
                        mean_ghat_xhat += ghat[j] * xhat[j];
                    }
                    mean_ghat = mean_ghat * inv_n;
                    mean_ghat_xhat = mean_ghat_xhat * inv_n;
                    for j in 0..n {
                        dx[r * n + j] = inv_std * (ghat[j] - mean_ghat - xhat[j] * mean_ghat_xhat);
                        dgain[j] += grow[j] * xhat[j];
                        dbias[j] += grow[j];
                    }
                }
                accum(grads, *x, Tensor::new(vec![m, n], dx)?)?;
                accum(grads, *gain, Tensor::new(vec![n], dgain)?)?;
                accum(grads, *bias, Tensor::new(vec![n], dbias)?)?;
            }
            Op::CausalSoftmax { scores } => {
                let p = &self.nodes[i].value;
                let (m, n) = (p.rows(), p.cols());
                let mut ds = vec![F::zero(); m * n];
                for r in 0..m {
                    let prefix = (r + 1).min(n);
                    let prow = p.row(r);
                    let grow = g.row(r);
                    let mut inner = F::zero();
                    for j in 0..prefix {
                        inner += grow[j] * prow[j];
                    }
                    for j in 0..prefix {
                        ds[r * n + j] = prow[j] * (grow[j] - inner);
                    }
                }
                accum(grads, *scores, Tensor::new(vec![m, n], ds)?)?;
            }
            Op::GatherRows { table, ids } => {
                let t = self.value(*table);
                let (v, d) = (t.rows(), t.cols());
                let mut dt = vec![F::zero(); v * d];
                for (r, &id) in ids.iter().enumerate() {
                    let grow = g.row(r);
                    for (acc, &gvv) in dt[id * d..(id + 1) * d].iter_mut().zip(grow.iter()) {
                        *acc += gvv;
                    }
                }
                accum(grads, *table, Tensor::new(vec![v, d], dt)?)?;
            }
            Op::RowSlice { a, row } => {
                let t = self.value(*a);
                let (m, n) = (t.rows(), t.cols());
                let mut da = vec![F::zero(); m * n];
                da[row * n..(row + 1) * n].copy_from_slice(g.row(0));
                accum(grads, *a, Tensor::new(vec![m, n], da)?)?;
            }
            Op::ConcatCols { parts } => {
                let m = g.rows();
                let mut col = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut dp = Vec::with_capacity(m * w);
                    for r in 0..m {
                        dp.extend_from_slice(&g.row(r)[col..col + w]);
                    }
                    accum(grads, p, Tensor::new(vec![m, w], dp)?)?;
                    col += w;
                }
            }
            Op::OverwriteRow { a, row, v } => {
                let n = g.cols();
                let mut da = g.data().to_vec();
                for x in da[row * n..(row + 1) * n].iter_mut() {
                    *x = F::zero();
                }
                accum(grads, *a, Tensor::new(g.shape().to_vec(), da)?)?;
                accum(grads, *v, Tensor::new(vec![n], g.row(*row).to_vec())?)?;
            }
            Op::SeqNll { logits, targets } => {
                let gs = g.item();
                let lg = self.value(*logits);
                let (m, n) = (lg.rows(), lg.cols());
                let scale_f = gs / F::of_f64(targets.len() as f64);
                let mut dl = vec![F::zero(); m * n];
                for &(row, tid) in targets {
                    let sm = tensor::softmax(
                        &Tensor::new(vec![n], lg.row(row).to_vec())?,
                        0,
                    )?;
                    for j in 0..n {
                        let indicator = if j == tid { F::one() } else { F::zero() };
                        dl[row * n + j] += scale_f * (sm.data()[j] - indicator);
                    }
                }
                accum(grads, *logits, Tensor::new(vec![m, n], dl)?)?;
            }
            Op::LogSoftmaxPick { logits, idx } => {
                let gs = g.item();
                let lg = self.value(*logits);
                let n = lg.cols();
                let sm = tensor::softmax(&Tensor::new(vec![n], lg.row(0).to_vec())?, 0)?;
                let mut dl = vec![F::zero(); n];
                for j in 0..n {
                    let indicator = if j == *idx { F::one() } else { F::zero() };
                    dl[j] = gs * (indicator - sm.data()[j]);
                }
                accum(grads, *logits, Tensor::new(vec![1, n], dl)?)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, stream};
    use rand::Rng as _;

    fn rand_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        let mut rng = rng_for(seed, stream::GRADCHECK);
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap()
    }

    /// Central finite differences on every coordinate of `leaf`, against the
    /// analytic gradient of a scalar function built by `build`.
    fn fd_check(
        leaves: Vec<Tensor<f64>>,
        build: impl Fn(&mut Tape<f64>, &[NodeId]) -> NodeId,
        tol: f64,
    ) {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &ids);
        let grads = tape.backward(loss).unwrap();

        let h = 1e-6;
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads.get(ids[li]).cloned();
            for ci in 0..leaf.len() {
                let eval = |delta: f64| {
                    let mut bumped = leaves.clone();
                    let mut d = bumped[li].data().to_vec();
                    d[ci] += delta;
                    bumped[li] = Tensor::new(bumped[li].shape().to_vec(), d).unwrap();
                    let mut t2 = Tape::new();
                    let ids2: Vec<NodeId> = bumped.iter().map(|t| t2.leaf(t.clone())).collect();
                    let l2 = build(&mut t2, &ids2);
                    t2.value(l2).item()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = analytic.as_ref().map(|t| t.data()[ci]).unwrap_or(0.0);
                assert!(
                    crate::num::rel_diff(an, fd, 1e-6) < tol,
                    "leaf {li} coord {ci}: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn grad_of_sum_of_squares_is_2w() {
        let w = rand_tensor(vec![3, 2], 1);
        let mut tape = Tape::new();
        let wid = tape.leaf(w.clone());
        // loss = sum w^2 via matmul trace trick: flatten -> dot with itself.
        // Simpler: w (.) w summed by nll-free route: use matmul_nt of flattened row.
        let flat = Tensor::new(vec![1, 6], w.data().to_vec()).unwrap();
        let mut t2 = Tape::new();
        let f = t2.leaf(flat);
        let loss = t2.matmul_nt(f, f).unwrap();
        let grads = t2.backward(loss).unwrap();
        let g = grads.get(f).unwrap();
        for (gv, wv) in g.data().iter().zip(w.data().iter()) {
            assert!((gv - 2.0 * wv).abs() < 1e-12);
        }
        // loss independent of a leaf -> None gradient
        let mut t3 = Tape::new();
        let a = t3.leaf(Tensor::scalar(1.0));
        let b = t3.leaf(Tensor::scalar(2.0));
        let loss3 = t3.scale(b, 3.0);
        let grads3 = t3.backward(loss3).unwrap();
        assert!(grads3.get(a).is_none());
        let _ = (wid, loss3);
    }

    #[test]
    fn backward_without_forward_is_an_error() {
        let tape: Tape<f64> = Tape::new();
        assert!(matches!(
            tape.backward(NodeId(0)),
            Err(TapeError::NoSuchNode(0))
        ));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let a = tape.leaf(rand_tensor(vec![2, 2], 3));
        assert!(matches!(
            tape.backward(a),
            Err(TapeError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn fd_matmul_chain() {
        fd_check(
            vec![rand_tensor(vec![2, 3], 10), rand_tensor(vec![3, 4], 11)],
            |t, ids| {
                let c = t.matmul(ids[0], ids[1]).unwrap();
                t.seq_nll(c, &[(0, 1), (1, 3)]).unwrap()
            },
            1e-5,
        );
    }

    #[test]
    fn fd_matmul_nt_and_rowslice() {
        fd_check(
            vec![rand_tensor(vec![3, 4], 20), rand_tensor(vec![5, 4], 21)],
            |t, ids| {
                let c = t.matmul_nt(ids[0], ids[1]).unwrap();
                let r = t.row_slice(c, 2).unwrap();
                t.log_softmax_pick(r, 3).unwrap()
            },
            1e-5,
        );
    }

    #[test]
    fn fd_layer_norm() {
        fd_check(
            vec![
                rand_tensor(vec![2, 5], 30),
                rand_tensor(vec![5], 31),
                rand_tensor(vec![5], 32),
            ],
            |t, ids| {
                let y = t.layer_norm(ids[0], ids[1], ids[2], 1e-5).unwrap();
                t.seq_nll(y, &[(0, 0), (1, 4)]).unwrap()
            },
            1e-4,
        );
    }

    #[test]
    fn fd_causal_softmax_gelu_addrow() {
        fd_check(
            vec![
                rand_tensor(vec![3, 3], 40),
                rand_tensor(vec![3, 3], 41),
                rand_tensor(vec![3], 42),
            ],
            |t, ids| {
                let p = t.causal_softmax(ids[0]).unwrap();
                let q = t.matmul(p, ids[1]).unwrap();
                let q = t.add_row(q, ids[2]).unwrap();
                let q = t.gelu(q);
                t.seq_nll(q, &[(2, 1)]).unwrap()
            },
            1e-4,
        );
    }

    #[test]
    fn fd_gather_concat_overwrite() {
        fd_check(
            vec![
                rand_tensor(vec![4, 3], 50),
                rand_tensor(vec![4, 2], 51),
                rand_tensor(vec![3], 52),
            ],
            |t, ids| {
                let g = t.gather_rows(ids[0], &[1, 1, 3]).unwrap();
                let g = t.overwrite_row(g, 0, ids[2]).unwrap();
                let h = t.gather_rows(ids[1], &[0, 2, 2]).unwrap();
                let c = t.concat_cols(&[g, h]).unwrap();
                t.seq_nll(c, &[(0, 2), (1, 4), (2, 0)]).unwrap()
            },
            1e-4,
        );
    }

    #[test]
    fn fd_scalar_combination() {
        fd_check(
            vec![rand_tensor(vec![1, 4], 60), rand_tensor(vec![1, 4], 61)],
            |t, ids| {
                let a = t.log_softmax_pick(ids[0], 1).unwrap();
                let b = t.log_softmax_pick(ids[1], 2).unwrap();
                let d = t.sub(a, b).unwrap();
                let s = t.scale(d, -1.5);
                let e = t.add(s, a).unwrap();
                t.scale(e, 0.7)
            },
            1e-5,
        );
    }

    #[test]
    fn causal_softmax_rows_sum_to_one_over_prefix() {
        let mut tape = Tape::new();
        let s = tape.leaf(rand_tensor(vec![4, 4], 70));
        let p = tape.causal_softmax(s).unwrap();
        let pv = tape.value(p);
        for i in 0..4 {
            let row = pv.row(i);
            let sum: f64 = row[..=i].iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            for &v in &row[i + 1..] {
                assert_eq!(v, 0.0);
            }
        }
    }
}
