//! The hook engine: perturb input embeddings and overwrite intermediate
//! states during a forward pass. These are the levers behind the three-run
//! attribution protocol in [`crate::causal`].

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::num::Scalar;
use crate::rng::Rng;
use crate::tensor::Tensor;
use rand_chacha::rand_core::SeedableRng;

#[derive(Debug, Error)]
pub enum InterveneError {
    #[error("duplicate patch for site {0}")]
    DuplicateSite(Site),
    #[error("an intervention set holds at most one embedding noise")]
    MultipleNoise,
    #[error("noise sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("noise position {position} out of range for sequence length {seq_len}")]
    NoisePositionOutOfRange { position: usize, seq_len: usize },
    #[error("unreachable patch target {site}: model has {n_layers} layers, prompt has {seq_len} tokens")]
    DanglingTarget {
        site: Site,
        n_layers: usize,
        seq_len: usize,
    },
    #[error("patch vector for {site} has length {got}, model width is {want}")]
    BadVector { site: Site, got: usize, want: usize },
}

/// Which intermediate value a patch replaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SiteKind {
    Residual,
    AttnOut,
    MlpOut,
}

impl SiteKind {
    pub const ALL: [SiteKind; 3] = [SiteKind::AttnOut, SiteKind::MlpOut, SiteKind::Residual];

    pub fn label(self) -> &'static str {
        match self {
            SiteKind::Residual => "residual",
            SiteKind::AttnOut => "attn_out",
            SiteKind::MlpOut => "mlp_out",
        }
    }

    pub fn parse(s: &str) -> Option<SiteKind> {
        match s {
            "residual" => Some(SiteKind::Residual),
            "attn_out" => Some(SiteKind::AttnOut),
            "mlp_out" => Some(SiteKind::MlpOut),
            _ => None,
        }
    }
}

impl std::fmt::Display for SiteKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// A single (component kind, layer, position) target. Layers are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Site {
    pub kind: SiteKind,
    pub layer: usize,
    pub position: usize,
}

impl std::fmt::Display for Site {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, layer {}, position {})", self.kind, self.layer, self.position)
    }
}

/// Gaussian corruption of selected input-embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNoise {
    pub positions: Vec<usize>,
    pub sigma: f64,
    pub seed: u64,
}

/// Ordered collection of interventions for one forward pass. At most one
/// patch per site and at most one embedding noise; patches at distinct sites
/// commute, so iteration order never affects the result.
#[derive(Debug, Clone, Default)]
pub struct InterventionSet<F: Scalar> {
    patches: BTreeMap<Site, Tensor<F>>,
    noise: Option<EmbeddingNoise>,
}

impl<F: Scalar> InterventionSet<F> {
    pub fn new() -> Self {
        Self {
            patches: BTreeMap::new(),
            noise: None,
        }
    }

    pub fn is_plain(&self) -> bool {
        self.patches.is_empty() && self.noise.is_none()
    }

    pub fn add_patch(&mut self, site: Site, vector: Tensor<F>) -> Result<(), InterveneError> {
        if self.patches.contains_key(&site) {
            return Err(InterveneError::DuplicateSite(site));
        }
        self.patches.insert(site, vector);
        Ok(())
    }

    pub fn set_noise(&mut self, noise: EmbeddingNoise) -> Result<(), InterveneError> {
        if self.noise.is_some() {
            return Err(InterveneError::MultipleNoise);
        }
        if noise.sigma <= 0.0 {
            return Err(InterveneError::BadSigma(noise.sigma));
        }
        self.noise = Some(noise);
        Ok(())
    }

    pub fn noise(&self) -> Option<&EmbeddingNoise> {
        self.noise.as_ref()
    }

    pub fn patch_at(&self, kind: SiteKind, layer: usize, position: usize) -> Option<&Tensor<F>> {
        self.patches.get(&Site {
            kind,
            layer,
            position,
        })
    }

    pub fn patches(&self) -> impl Iterator<Item = (&Site, &Tensor<F>)> {
        self.patches.iter()
    }

    /// Reject targets that do not exist in the upcoming pass.
    pub fn validate(
        &self,
        n_layers: usize,
        seq_len: usize,
        d_model: usize,
    ) -> Result<(), InterveneError> {
        for (site, vector) in &self.patches {
            if site.layer == 0 || site.layer > n_layers || site.position >= seq_len {
                return Err(InterveneError::DanglingTarget {
                    site: *site,
                    n_layers,
                    seq_len,
                });
            }
            if vector.len() != d_model {
                return Err(InterveneError::BadVector {
                    site: *site,
                    got: vector.len(),
                    want: d_model,
                });
            }
        }
        if let Some(noise) = &self.noise {
            for &p in &noise.positions {
                if p >= seq_len {
                    return Err(InterveneError::NoisePositionOutOfRange {
                        position: p,
                        seq_len,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Additive Gaussian noise tensor for a [seq_len, d] embedding block: i.i.d.
/// N(0, sigma^2) draws at the listed rows, zero elsewhere. Draws come from
/// the seeded generator in listed-position order, so a seed fully determines
/// the perturbation.
pub fn noise_block<F: Scalar>(noise: &EmbeddingNoise, seq_len: usize, d: usize) -> Tensor<F> {
    let mut rng = Rng::seed_from_u64(noise.seed);
    let mut data = vec![F::zero(); seq_len * d];
    for &p in &noise.positions {
        for slot in data[p * d..(p + 1) * d].iter_mut() {
            let draw: f64 = StandardNormal.sample(&mut rng);
            *slot = F::of_f64(draw * noise.sigma);
        }
    }
    Tensor::from_parts(vec![seq_len, d], data)
}

/// Add N(0, sigma^2) draws to exactly the listed rows of `rows`.
pub fn apply_embedding_noise<F: Scalar>(
    rows: &Tensor<F>,
    noise: &EmbeddingNoise,
) -> Result<Tensor<F>, InterveneError> {
    let (m, d) = (rows.rows(), rows.cols());
    for &p in &noise.positions {
        if p >= m {
            return Err(InterveneError::NoisePositionOutOfRange {
                position: p,
                seq_len: m,
            });
        }
    }
    if noise.sigma <= 0.0 {
        return Err(InterveneError::BadSigma(noise.sigma));
    }
    let block = noise_block::<F>(noise, m, d);
    Ok(crate::tensor::add(rows, &block).expect("shapes match"))
}

/// How the noise scale is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SigmaMode {
    /// sigma = 1
    #[serde(rename = "unit")]
    Unit,
    /// sigma = 3 x empirical standard deviation of the input-embedding entries
    #[serde(rename = "3xstd")]
    ThreeTimesStd,
}

/// Which subject positions receive noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScope {
    FirstSubjectToken,
    AllSubjectTokens,
}

/// Population standard deviation of all entries of an embedding table.
pub fn embedding_std<F: Scalar>(table: &Tensor<F>) -> f64 {
    let n = table.len() as f64;
    let mut mean = 0.0;
    for &v in table.data() {
        mean += v.as_f64();
    }
    mean /= n;
    let mut var = 0.0;
    for &v in table.data() {
        let d = v.as_f64() - mean;
        var += d * d;
    }
    (var / n).sqrt()
}

/// Resolve the noise sigma for a model's input embeddings.
pub fn resolve_sigma<F: Scalar>(mode: SigmaMode, input_embeddings: &Tensor<F>) -> f64 {
    match mode {
        SigmaMode::Unit => 1.0,
        SigmaMode::ThreeTimesStd => 3.0 * embedding_std(input_embeddings),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_deterministic_in_seed() {
        let rows = Tensor::<f64>::zeros(vec![4, 8]);
        let noise = EmbeddingNoise {
            positions: vec![1, 2],
            sigma: 0.5,
            seed: 99,
        };
        let a = apply_embedding_noise(&rows, &noise).unwrap();
        let b = apply_embedding_noise(&rows, &noise).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_touches_only_listed_positions() {
        let rows = Tensor::<f64>::zeros(vec![4, 8]);
        let noise = EmbeddingNoise {
            positions: vec![2],
            sigma: 1.0,
            seed: 7,
        };
        let out = apply_embedding_noise(&rows, &noise).unwrap();
        for p in [0usize, 1, 3] {
            assert!(out.row(p).iter().all(|&v| v == 0.0));
        }
        assert!(out.row(2).iter().any(|&v| v != 0.0));

        let empty = EmbeddingNoise {
            positions: vec![],
            sigma: 1.0,
            seed: 7,
        };
        assert_eq!(apply_embedding_noise(&rows, &empty).unwrap(), rows);
    }

    #[test]
    fn noise_sample_statistics_match_sigma() {
        // 10^5 draws: mean within 1% of sigma, std within 1% of sigma
        let d = 100_000;
        let noise = EmbeddingNoise {
            positions: vec![0],
            sigma: 0.15,
            seed: 12345,
        };
        let block = noise_block::<f64>(&noise, 1, d);
        let n = d as f64;
        let mean: f64 = block.data().iter().sum::<f64>() / n;
        let var: f64 = block.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01 * noise.sigma, "mean {mean}");
        assert!((var.sqrt() - noise.sigma).abs() < 0.01 * noise.sigma);
    }

    #[test]
    fn set_rejects_duplicates_and_double_noise() {
        let mut set: InterventionSet<f32> = InterventionSet::new();
        let site = Site {
            kind: SiteKind::MlpOut,
            layer: 1,
            position: 0,
        };
        set.add_patch(site, Tensor::zeros(vec![4])).unwrap();
        assert!(matches!(
            set.add_patch(site, Tensor::zeros(vec![4])),
            Err(InterveneError::DuplicateSite(_))
        ));
        set.set_noise(EmbeddingNoise {
            positions: vec![0],
            sigma: 1.0,
            seed: 0,
        })
        .unwrap();
        assert!(matches!(
            set.set_noise(EmbeddingNoise {
                positions: vec![0],
                sigma: 1.0,
                seed: 0,
            }),
            Err(InterveneError::MultipleNoise)
        ));
    }

    #[test]
    fn validate_reports_dangling_targets() {
        let mut set: InterventionSet<f32> = InterventionSet::new();
        set.add_patch(
            Site {
                kind: SiteKind::Residual,
                layer: 3,
                position: 5,
            },
            Tensor::zeros(vec![4]),
        )
        .unwrap();
        let err = set.validate(2, 8, 4).unwrap_err();
        assert!(err.to_string().contains("layer 3"));
        let err = set.validate(4, 4, 4).unwrap_err();
        assert!(err.to_string().contains("position 5"));
    }

    #[test]
    fn embedding_std_of_known_table() {
        let t = Tensor::new(vec![2, 2], vec![1.0f64, -1.0, 1.0, -1.0]).unwrap();
        assert!((embedding_std(&t) - 1.0).abs() < 1e-12);
        assert!((resolve_sigma(SigmaMode::ThreeTimesStd, &t) - 3.0).abs() < 1e-12);
        assert_eq!(resolve_sigma(SigmaMode::Unit, &t), 1.0);
    }
}
