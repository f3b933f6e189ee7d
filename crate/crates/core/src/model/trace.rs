//! Per-pass record of every intermediate state the analyses read.

use thiserror::Error;

use crate::intervene::{Site, SiteKind};
use crate::num::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("residual additivity violated at layer {layer} position {position}: rel err {rel_err:.3e} > {tol:.1e}")]
    Additivity {
        layer: usize,
        position: usize,
        rel_err: f64,
        tol: f64,
    },
    #[error("final-state reconstruction off at position {position}: rel err {rel_err:.3e} > {tol:.1e}")]
    FinalReconstruction {
        position: usize,
        rel_err: f64,
        tol: f64,
    },
}

/// Residual stream states (`h`), attention outputs (`a`) and MLP outputs
/// (`m`) for every layer and position, plus the input embeddings and the
/// final pre-unembedding state. Layer indices are 1-based; `h(0, i)` is the
/// input embedding at position i.
#[derive(Debug, Clone)]
pub struct ActivationTrace<F: Scalar> {
    pub input_embeddings: Tensor<F>,
    /// residual stream after layer l, index l-1; each [T, d]
    pub residuals: Vec<Tensor<F>>,
    /// attention output of layer l, index l-1
    pub attn_outs: Vec<Tensor<F>>,
    /// MLP output of layer l, index l-1
    pub mlp_outs: Vec<Tensor<F>>,
    /// final layer-norm output fed to the unembedding
    pub final_state: Tensor<F>,
}

impl<F: Scalar> ActivationTrace<F> {
    pub fn n_layers(&self) -> usize {
        self.residuals.len()
    }

    pub fn seq_len(&self) -> usize {
        self.input_embeddings.rows()
    }

    /// Residual state h at (layer, position); layer 0 is the input embedding.
    pub fn h(&self, layer: usize, position: usize) -> &[F] {
        if layer == 0 {
            self.input_embeddings.row(position)
        } else {
            self.residuals[layer - 1].row(position)
        }
    }

    pub fn a(&self, layer: usize, position: usize) -> &[F] {
        self.attn_outs[layer - 1].row(position)
    }

    pub fn m(&self, layer: usize, position: usize) -> &[F] {
        self.mlp_outs[layer - 1].row(position)
    }

    /// Vector at an intervention site, as a fresh [d] tensor.
    pub fn site_value(&self, site: Site) -> Tensor<F> {
        let row = match site.kind {
            SiteKind::Residual => self.h(site.layer, site.position),
            SiteKind::AttnOut => self.a(site.layer, site.position),
            SiteKind::MlpOut => self.m(site.layer, site.position),
        };
        Tensor::from_parts(vec![row.len()], row.to_vec())
    }

    /// Verify h^(l) = h^(l-1) + a^(l) + m^(l) per (layer, position), and the
    /// final residual against input embedding + sum of all a and m.
    pub fn check_additivity(&self, layer_tol: f64, final_tol: f64) -> Result<(), TraceError> {
        let (t, d) = (self.seq_len(), self.input_embeddings.cols());
        for l in 1..=self.n_layers() {
            for i in 0..t {
                let prev = self.h(l - 1, i);
                let a = self.a(l, i);
                let m = self.m(l, i);
                let h = self.h(l, i);
                let rel_err = max_rel_err_sum3(prev, a, m, h);
                if rel_err > layer_tol {
                    return Err(TraceError::Additivity {
                        layer: l,
                        position: i,
                        rel_err,
                        tol: layer_tol,
                    });
                }
            }
        }
        let last = self.n_layers();
        for i in 0..t {
            let mut acc: Vec<f64> = self.h(0, i).iter().map(|v| v.as_f64()).collect();
            for l in 1..=last {
                for (x, (&a, &m)) in acc
                    .iter_mut()
                    .zip(self.a(l, i).iter().zip(self.m(l, i).iter()))
                {
                    *x += a.as_f64() + m.as_f64();
                }
            }
            let h = self.h(last, i);
            let mut rel_err = 0.0f64;
            for j in 0..d {
                rel_err = rel_err.max(crate::num::rel_diff(acc[j], h[j].as_f64(), 1e-6));
            }
            if rel_err > final_tol {
                return Err(TraceError::FinalReconstruction {
                    position: i,
                    rel_err,
                    tol: final_tol,
                });
            }
        }
        Ok(())
    }
}

fn max_rel_err_sum3<F: Scalar>(prev: &[F], a: &[F], m: &[F], h: &[F]) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..h.len() {
        let want = prev[j].as_f64() + a[j].as_f64() + m[j].as_f64();
        worst = worst.max(crate::num::rel_diff(want, h[j].as_f64(), 1e-6));
    }
    worst
}
