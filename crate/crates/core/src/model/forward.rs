//! The taped forward pass. One code path serves inference, tracing, patched
//! attribution runs and training; whether gradients or a trace are extracted
//! is up to the caller.

use super::config::ModelConfig;
use super::trace::ActivationTrace;
use super::weights::TransformerWeights;
use super::ModelError;
use crate::intervene::{noise_block, InterventionSet, SiteKind};
use crate::num::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Handles into the tape for one forward pass.
pub struct TapedForward<F: Scalar> {
    pub tape: Tape<F>,
    /// [T, |V|]
    pub logits: NodeId,
    /// input embedding block (post-noise, post-position), = h^(0)
    pub embeddings: NodeId,
    /// residual stream per layer, index l-1
    pub residuals: Vec<NodeId>,
    pub attn_outs: Vec<NodeId>,
    pub mlp_outs: Vec<NodeId>,
    /// causal attention probability matrices, [layer][head]
    pub attn_probs: Vec<Vec<NodeId>>,
    /// final layer-norm output
    pub final_state: NodeId,
    /// tape leaf per parameter, in `weights.params()` order
    pub param_leaves: Vec<NodeId>,
    pub seq_len: usize,
}

impl<F: Scalar> TapedForward<F> {
    pub fn logits_tensor(&self) -> &Tensor<F> {
        self.tape.value(self.logits)
    }

    pub fn trace(&self) -> ActivationTrace<F> {
        ActivationTrace {
            input_embeddings: self.tape.value(self.embeddings).clone(),
            residuals: self
                .residuals
                .iter()
                .map(|&id| self.tape.value(id).clone())
                .collect(),
            attn_outs: self
                .attn_outs
                .iter()
                .map(|&id| self.tape.value(id).clone())
                .collect(),
            mlp_outs: self
                .mlp_outs
                .iter()
                .map(|&id| self.tape.value(id).clone())
                .collect(),
            final_state: self.tape.value(self.final_state).clone(),
        }
    }
}

pub(super) fn run<F: Scalar>(
    cfg: &ModelConfig,
    weights: &TransformerWeights<F>,
    tokens: &[usize],
    interventions: &InterventionSet<F>,
) -> Result<TapedForward<F>, ModelError> {
    let t = tokens.len();
    if t == 0 {
        return Err(ModelError::EmptyInput);
    }
    if t > cfg.max_seq_len {
        return Err(ModelError::OverLongInput {
            len: t,
            max: cfg.max_seq_len,
        });
    }
    for &id in tokens {
        if id >= cfg.vocab_size {
            return Err(ModelError::TokenIdOutOfRange {
                id,
                vocab_size: cfg.vocab_size,
            });
        }
    }
    interventions.validate(cfg.n_layers, t, cfg.d_model)?;

    let mut tape = Tape::new();
    let param_leaves: Vec<NodeId> = weights
        .params()
        .iter()
        .map(|p| tape.leaf(p.value.clone()))
        .collect();
    let leaf = |w: &TransformerWeights<F>, name: &str| -> NodeId {
        param_leaves[w.position(name).expect("known parameter")]
    };

    let tok = tape.gather_rows(leaf(weights, "tok_embed"), tokens)?;
    let tok = match interventions.noise() {
        Some(noise) => {
            let block = tape.leaf(noise_block::<F>(noise, t, cfg.d_model));
            tape.add(tok, block)?
        }
        None => tok,
    };
    let positions: Vec<usize> = (0..t).collect();
    let pos = tape.gather_rows(leaf(weights, "pos_embed"), &positions)?;
    let embeddings = tape.add(tok, pos)?;

    let eps = F::of_f64(cfg.layer_norm_eps);
    let inv_sqrt_dh = F::of_f64(1.0 / (cfg.d_head() as f64).sqrt());

    let apply_patches = |tape: &mut Tape<F>,
                             value: NodeId,
                             kind: SiteKind,
                             layer: usize|
     -> Result<NodeId, ModelError> {
        let mut out = value;
        for pos in 0..t {
            if let Some(vector) = interventions.patch_at(kind, layer, pos) {
                let v = tape.leaf(vector.clone());
                out = tape.overwrite_row(out, pos, v)?;
            }
        }
        Ok(out)
    };

    let mut h_prev = embeddings;
    let mut residuals = Vec::with_capacity(cfg.n_layers);
    let mut attn_outs = Vec::with_capacity(cfg.n_layers);
    let mut mlp_outs = Vec::with_capacity(cfg.n_layers);
    let mut attn_probs = Vec::with_capacity(cfg.n_layers);

    for l in 1..=cfg.n_layers {
        let ln1 = tape.layer_norm(
            h_prev,
            leaf(weights, &format!("layer{l}.ln1.gain")),
            leaf(weights, &format!("layer{l}.ln1.bias")),
            eps,
        )?;
        let mut heads = Vec::with_capacity(cfg.n_heads);
        let mut probs = Vec::with_capacity(cfg.n_heads);
        for k in 0..cfg.n_heads {
            let name = |p: &str| format!("layer{l}.attn.head{k}.{p}");
            let q = tape.matmul(ln1, leaf(weights, &name("wq")))?;
            let q = tape.add_row(q, leaf(weights, &name("bq")))?;
            let key = tape.matmul(ln1, leaf(weights, &name("wk")))?;
            let key = tape.add_row(key, leaf(weights, &name("bk")))?;
            let v = tape.matmul(ln1, leaf(weights, &name("wv")))?;
            let v = tape.add_row(v, leaf(weights, &name("bv")))?;
            let scores = tape.matmul_nt(q, key)?;
            let scores = tape.scale(scores, inv_sqrt_dh);
            let p = tape.causal_softmax(scores)?;
            probs.push(p);
            heads.push(tape.matmul(p, v)?);
        }
        let cat = tape.concat_cols(&heads)?;
        let a = tape.matmul(cat, leaf(weights, &format!("layer{l}.attn.wo")))?;
        let a = tape.add_row(a, leaf(weights, &format!("layer{l}.attn.bo")))?;
        let a = apply_patches(&mut tape, a, SiteKind::AttnOut, l)?;

        let u = tape.add(h_prev, a)?;
        let ln2 = tape.layer_norm(
            u,
            leaf(weights, &format!("layer{l}.ln2.gain")),
            leaf(weights, &format!("layer{l}.ln2.bias")),
            eps,
        )?;
        let mid = tape.matmul(ln2, leaf(weights, &format!("layer{l}.mlp.w1")))?;
        let mid = tape.add_row(mid, leaf(weights, &format!("layer{l}.mlp.b1")))?;
        let mid = tape.gelu(mid);
        let m = tape.matmul(mid, leaf(weights, &format!("layer{l}.mlp.w2")))?;
        let m = tape.add_row(m, leaf(weights, &format!("layer{l}.mlp.b2")))?;
        let m = apply_patches(&mut tape, m, SiteKind::MlpOut, l)?;

        let h = tape.add(u, m)?;
        let h = apply_patches(&mut tape, h, SiteKind::Residual, l)?;

        attn_outs.push(a);
        mlp_outs.push(m);
        residuals.push(h);
        attn_probs.push(probs);
        h_prev = h;
    }

    let final_state = tape.layer_norm(
        h_prev,
        leaf(weights, "ln_f.gain"),
        leaf(weights, "ln_f.bias"),
        eps,
    )?;
    let logits = tape.matmul_nt(final_state, leaf(weights, "unembed"))?;

    Ok(TapedForward {
        tape,
        logits,
        embeddings,
        residuals,
        attn_outs,
        mlp_outs,
        attn_probs,
        final_state,
        param_leaves,
        seq_len: t,
    })
}
