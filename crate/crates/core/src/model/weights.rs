//! Trainable parameters and their layout.
//!
//! Parameters live in one flat, deterministically ordered vector; structured
//! access goes through the name scheme below. The vector order is also the
//! serialization manifest order.
//!
//! Name scheme (layers are 1-based, heads 0-based):
//!   tok_embed, pos_embed, unembed, ln_f.gain, ln_f.bias,
//!   layer{l}.ln1.{gain,bias}
//!   layer{l}.attn.head{k}.{wq,bq,wk,bk,wv,bv}
//!   layer{l}.attn.{wo,bo}
//!   layer{l}.ln2.{gain,bias}
//!   layer{l}.mlp.{w1,b1,w2,b2}

use std::collections::HashMap;

use rand_distr::{Distribution, StandardNormal};

use super::config::ModelConfig;
use crate::num::Scalar;
use crate::rng::{rng_for, stream};
use crate::tensor::Tensor;

/// Named value with a gradient accumulator of identical shape.
#[derive(Debug, Clone)]
pub struct Parameter<F: Scalar> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
}

impl<F: Scalar> Parameter<F> {
    pub fn new(name: impl Into<String>, value: Tensor<F>) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn reset_grad(&mut self) {
        self.grad = Tensor::zeros(self.value.shape().to_vec());
    }

    pub fn accumulate_grad(&mut self, delta: &Tensor<F>) {
        debug_assert_eq!(self.grad.shape(), delta.shape());
        let g = self.grad.data_mut();
        for (acc, &d) in g.iter_mut().zip(delta.data().iter()) {
            *acc += d;
        }
    }
}

/// Expected (name, shape) list for a config, in canonical order.
pub fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let dh = cfg.d_head();
    let mut out = vec![
        ("tok_embed".to_string(), vec![cfg.vocab_size, d]),
        ("pos_embed".to_string(), vec![cfg.max_seq_len, d]),
        ("unembed".to_string(), vec![cfg.vocab_size, d]),
        ("ln_f.gain".to_string(), vec![d]),
        ("ln_f.bias".to_string(), vec![d]),
    ];
    for l in 1..=cfg.n_layers {
        out.push((format!("layer{l}.ln1.gain"), vec![d]));
        out.push((format!("layer{l}.ln1.bias"), vec![d]));
        for k in 0..cfg.n_heads {
            for (w, b) in [("wq", "bq"), ("wk", "bk"), ("wv", "bv")] {
                out.push((format!("layer{l}.attn.head{k}.{w}"), vec![d, dh]));
                out.push((format!("layer{l}.attn.head{k}.{b}"), vec![dh]));
            }
        }
        out.push((format!("layer{l}.attn.wo"), vec![d, d]));
        out.push((format!("layer{l}.attn.bo"), vec![d]));
        out.push((format!("layer{l}.ln2.gain"), vec![d]));
        out.push((format!("layer{l}.ln2.bias"), vec![d]));
        out.push((format!("layer{l}.mlp.w1"), vec![d, cfg.mlp_hidden]));
        out.push((format!("layer{l}.mlp.b1"), vec![cfg.mlp_hidden]));
        out.push((format!("layer{l}.mlp.w2"), vec![cfg.mlp_hidden, d]));
        out.push((format!("layer{l}.mlp.b2"), vec![d]));
    }
    out
}

/// All trainable tensors of one model.
#[derive(Debug, Clone)]
pub struct TransformerWeights<F: Scalar> {
    params: Vec<Parameter<F>>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> TransformerWeights<F> {
    /// Seeded Gaussian init: embeddings and projections N(0, 0.02^2);
    /// residual-writing projections (attn.wo, mlp.w2) shrunk by 1/sqrt(2L);
    /// biases zero; layer-norm gains one.
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut rng = rng_for(cfg.seed, stream::INIT);
        let base_std = 0.02;
        let resid_scale = 1.0 / ((2 * cfg.n_layers) as f64).sqrt();
        let params = layout(cfg)
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let last = name.rsplit('.').next().unwrap_or(&name);
                let data: Vec<F> = if last == "gain" {
                    vec![F::one(); n]
                } else if last.starts_with('b') {
                    vec![F::zero(); n]
                } else {
                    let std = if name.ends_with("attn.wo") || name.ends_with("mlp.w2") {
                        base_std * resid_scale
                    } else {
                        base_std
                    };
                    (0..n)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            F::of_f64(z * std)
                        })
                        .collect()
                };
                Parameter::new(name, Tensor::from_parts(shape, data))
            })
            .collect();
        Self::from_params(params)
    }

    pub fn from_params(params: Vec<Parameter<F>>) -> Self {
        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        Self { params, index }
    }

    pub fn get(&self, name: &str) -> &Parameter<F> {
        &self.params[self.index[name]]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Parameter<F> {
        &mut self.params[self.index[name]]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn params(&self) -> &[Parameter<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<F>] {
        &mut self.params
    }

    pub fn reset_grads(&mut self) {
        for p in &mut self.params {
            p.reset_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> TransformerWeights<G> {
        TransformerWeights::from_params(
            self.params
                .iter()
                .map(|p| Parameter::new(p.name.clone(), p.value.cast::<G>()))
                .collect(),
        )
    }

    /// Exact equality of all values (grads ignored).
    pub fn bit_equal(&self, other: &TransformerWeights<F>) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(other.params.iter())
                .all(|(a, b)| a.name == b.name && a.value == b.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig::new(2, 8, 2, 11, 5, 42).unwrap()
    }

    #[test]
    fn layout_shapes_are_consistent() {
        let cfg = cfg();
        let w = TransformerWeights::<f32>::init(&cfg);
        for (name, shape) in layout(&cfg) {
            assert_eq!(w.get(&name).value.shape(), &shape[..], "{name}");
        }
        assert_eq!(w.get("layer1.attn.head1.wq").value.shape(), &[8, 4]);
    }

    #[test]
    fn init_is_deterministic_and_grads_start_zero() {
        let cfg = cfg();
        let a = TransformerWeights::<f32>::init(&cfg);
        let b = TransformerWeights::<f32>::init(&cfg);
        assert!(a.bit_equal(&b));
        for p in a.params() {
            assert_eq!(p.grad.shape(), p.value.shape());
            assert!(p.grad.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn grad_reset_and_accumulate() {
        let cfg = cfg();
        let mut w = TransformerWeights::<f64>::init(&cfg);
        let delta = Tensor::from_parts(vec![8], vec![1.0; 8]);
        w.get_mut("ln_f.gain").accumulate_grad(&delta);
        w.get_mut("ln_f.gain").accumulate_grad(&delta);
        assert!(w.get("ln_f.gain").grad.data().iter().all(|&v| v == 2.0));
        w.get_mut("ln_f.gain").reset_grad();
        assert!(w.get("ln_f.gain").grad.data().iter().all(|&v| v == 0.0));
    }
}
