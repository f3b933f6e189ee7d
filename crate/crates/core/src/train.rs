//! Optimizers and the language-model pretraining loop.
//!
//! Batch gradients are accumulated in fixed-size chunks: chunks are evaluated
//! in parallel, but each chunk sums its examples sequentially and chunks are
//! reduced in index order, so gradients are bit-identical for any thread
//! count.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{io, ModelError, Transformer, TransformerWeights};
use crate::num::Scalar;
use crate::rng::{rng_for_indexed, stream};
use crate::tape::TapeError;
use crate::tensor::{Tensor, TensorError};

/// Examples per deterministic accumulation chunk (fixed; independent of the
/// worker count on purpose).
pub const GRAD_CHUNK: usize = 4;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged (non-finite loss) at step {step}")]
    Diverged { step: u64 },
    #[error("no usable training sequences (need length >= 2)")]
    EmptyData,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    WeightIo(#[from] io::WeightIoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer state over the flat parameter list.
pub struct Optimizer<F: Scalar> {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Scalar> Optimizer<F> {
    pub fn new(kind: OptimizerKind, lr: f64, weights: &TransformerWeights<F>) -> Self {
        let zeros: Vec<Tensor<F>> = weights
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.value.shape().to_vec()))
            .collect();
        Self {
            kind,
            lr,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Apply one update from the gradients accumulated in the parameters
    /// (scaled by `grad_scale`, clipped to `grad_clip` global norm), then
    /// reset the accumulators.
    pub fn step(
        &mut self,
        weights: &mut TransformerWeights<F>,
        grad_scale: f64,
        grad_clip: Option<f64>,
    ) {
        self.step += 1;
        let mut clip_scale = 1.0;
        if let Some(clip) = grad_clip {
            let mut norm2 = 0.0;
            for p in weights.params() {
                for &g in p.grad.data() {
                    let g = g.as_f64() * grad_scale;
                    norm2 += g * g;
                }
            }
            let norm = norm2.sqrt();
            if norm > clip {
                clip_scale = clip / norm;
            }
        }
        let scale = F::of_f64(grad_scale * clip_scale);
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = F::of_f64(self.lr);
                for p in weights.params_mut() {
                    let grad = p.grad.clone();
                    let value = p.value.data_mut();
                    for (w, &g) in value.iter_mut().zip(grad.data().iter()) {
                        *w = *w - lr * g * scale;
                    }
                }
            }
            OptimizerKind::Adam => {
                let b1: f64 = 0.9;
                let b2: f64 = 0.999;
                let eps = 1e-8;
                let bias1 = 1.0 - b1.powi(self.step as i32);
                let bias2 = 1.0 - b2.powi(self.step as i32);
                for (i, p) in weights.params_mut().iter_mut().enumerate() {
                    let grad = p.grad.clone();
                    let m = self.m[i].data_mut();
                    let v = self.v[i].data_mut();
                    let value = p.value.data_mut();
                    for j in 0..grad.len() {
                        let g = grad.data()[j].as_f64() * grad_scale * clip_scale;
                        let mj = b1 * m[j].as_f64() + (1.0 - b1) * g;
                        let vj = b2 * v[j].as_f64() + (1.0 - b2) * g * g;
                        m[j] = F::of_f64(mj);
                        v[j] = F::of_f64(vj);
                        let update = self.lr * (mj / bias1) / ((vj / bias2).sqrt() + eps);
                        value[j] = value[j] - F::of_f64(update);
                    }
                }
            }
        }
        weights.reset_grads();
    }
}

/// Per-example gradient result: one optional tensor per parameter plus the
/// example's loss values (length fixed per caller).
pub struct ExampleGrads<F: Scalar> {
    pub per_param: Vec<Option<Tensor<F>>>,
    pub losses: Vec<f64>,
}

/// Deterministic chunked gradient accumulation over a batch. Returns summed
/// per-parameter gradients and summed loss values.
pub fn parallel_batch_grads<F, T, E>(
    items: &[T],
    n_params: usize,
    n_losses: usize,
    eval: impl Fn(&T) -> Result<ExampleGrads<F>, E> + Sync,
) -> Result<(Vec<Option<Tensor<F>>>, Vec<f64>), E>
where
    F: Scalar,
    T: Sync,
    E: Send,
{
    let chunk_results: Vec<Result<(Vec<Option<Tensor<F>>>, Vec<f64>), E>> = items
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut acc: Vec<Option<Tensor<F>>> = (0..n_params).map(|_| None).collect();
            let mut losses = vec![0.0; n_losses];
            for item in chunk {
                let ex = eval(item)?;
                for (slot, g) in acc.iter_mut().zip(ex.per_param.into_iter()) {
                    if let Some(g) = g {
                        *slot = Some(match slot.take() {
                            None => g,
                            Some(cur) => crate::tensor::add(&cur, &g).expect("same shape"),
                        });
                    }
                }
                for (l, v) in losses.iter_mut().zip(ex.losses.iter()) {
                    *l += v;
                }
            }
            Ok((acc, losses))
        })
        .collect();

    let mut total: Vec<Option<Tensor<F>>> = (0..n_params).map(|_| None).collect();
    let mut losses = vec![0.0; n_losses];
    for r in chunk_results {
        let (acc, ls) = r?;
        for (slot, g) in total.iter_mut().zip(acc.into_iter()) {
            if let Some(g) = g {
                *slot = Some(match slot.take() {
                    None => g,
                    Some(cur) => crate::tensor::add(&cur, &g).expect("same shape"),
                });
            }
        }
        for (l, v) in losses.iter_mut().zip(ls.iter()) {
            *l += v;
        }
    }
    Ok((total, losses))
}

/// Next-token NLL gradients for one sequence.
pub fn lm_example_grads<F: Scalar>(
    model: &Transformer<F>,
    tokens: &[usize],
) -> Result<ExampleGrads<F>, TrainError> {
    let run = model.forward_taped(tokens, &crate::intervene::InterventionSet::new())?;
    let targets: Vec<(usize, usize)> = (0..tokens.len() - 1)
        .map(|i| (i, tokens[i + 1]))
        .collect();
    let mut tape = run.tape;
    let loss = tape.seq_nll(run.logits, &targets)?;
    let loss_value = tape.value(loss).item().as_f64();
    let grads = tape.backward(loss)?;
    let per_param: Vec<Option<Tensor<F>>> = run
        .param_leaves
        .iter()
        .map(|&leaf| grads.get(leaf).cloned())
        .collect();
    Ok(ExampleGrads {
        per_param,
        losses: vec![loss_value],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// checkpoint every this many optimizer steps (0 disables checkpoints)
    pub ckpt_every: usize,
    pub grad_clip: Option<f64>,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            epochs: 3,
            ckpt_every: 0,
            grad_clip: Some(1.0),
            optimizer: OptimizerKind::Adam,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
}

/// Train on next-token prediction over the given sequences. Sequences longer
/// than the context window are truncated; shorter than 2 tokens are skipped.
/// With a run directory, checkpoints and a run manifest are written.
pub fn train_lm<F: Scalar>(
    model: &mut Transformer<F>,
    sequences: &[Vec<usize>],
    cfg: &TrainConfig,
    seed: u64,
    run_dir: Option<&Path>,
) -> Result<Vec<StepRecord>, TrainError> {
    let max_len = model.cfg.max_seq_len;
    let data: Vec<Vec<usize>> = sequences
        .iter()
        .filter(|s| s.len() >= 2)
        .map(|s| s[..s.len().min(max_len)].to_vec())
        .collect();
    if data.is_empty() {
        return Err(TrainError::EmptyData);
    }

    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr, &model.weights);
    let mut log = Vec::new();
    let mut ckpt_steps: Vec<u64> = Vec::new();
    let mut step: u64 = 0;
    let n_params = model.weights.params().len();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = rng_for_indexed(seed, stream::TRAIN, epoch as u64);
        order.shuffle(&mut rng);

        for batch_ids in order.chunks(cfg.batch_size) {
            let batch: Vec<&Vec<usize>> = batch_ids.iter().map(|&i| &data[i]).collect();
            let (grads, losses) =
                parallel_batch_grads(&batch, n_params, 1, |seq| lm_example_grads(model, seq))?;
            let mean_loss = losses[0] / batch.len() as f64;
            if !mean_loss.is_finite() {
                return Err(TrainError::Diverged { step });
            }
            for (i, g) in grads.into_iter().enumerate() {
                if let Some(g) = g {
                    model.weights.params_mut()[i].accumulate_grad(&g);
                }
            }
            optimizer.step(&mut model.weights, 1.0 / batch.len() as f64, cfg.grad_clip);
            step += 1;
            log.push(StepRecord {
                step,
                loss: mean_loss,
            });

            if let Some(dir) = run_dir {
                if cfg.ckpt_every > 0 && step as usize % cfg.ckpt_every == 0 {
                    ckpt_steps.push(step);
                    io::save_checkpoint(dir, &ckpt_steps, &model.cfg, &model.weights)?;
                }
            }
        }
    }

    if let Some(dir) = run_dir {
        if ckpt_steps.last() != Some(&step) {
            ckpt_steps.push(step);
            io::save_checkpoint(dir, &ckpt_steps, &model.cfg, &model.weights)?;
        }
    }
    Ok(log)
}
