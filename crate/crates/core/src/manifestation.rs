//! Externally observable features that separate the two failure mechanisms:
//! input-embedding association strengths, robustness of the wrong answer
//! under input noise, and predictive uncertainty.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causal::{HallucinationQuery, Mechanism, NoiseSample, Tracer};
use crate::intervene::InterventionSet;
use crate::model::{next_token_distribution, ModelError, Transformer};
use crate::num::Scalar;
use crate::tensor::{dot_slices, entropy, TensorError};

#[derive(Debug, Error)]
pub enum ManifestationError {
    #[error("empty noise pool")]
    EmptyNoisePool,
    #[error("no queries in group {0}")]
    EmptyGroup(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Causal(#[from] crate::causal::CausalError),
}

/// How a noise draw counts as failing to flip the model's preference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustnessRule {
    /// failure iff the model still prefers the wrong answer (y* > 0; default)
    PrefersPredicted,
    /// boundary variant: failure iff the preference did not strictly flip
    /// (y* >= 0)
    NotFlipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifestationFeatures {
    /// mean input-embedding inner product between subject tokens and the
    /// true object
    pub so_assoc: f64,
    /// same against the predicted (wrong) object
    pub so_prime_assoc: f64,
    /// fraction of noise draws that fail to restore the true answer
    pub robustness: f64,
    /// entropy (nats) of the next-token distribution
    pub uncertainty: f64,
}

/// Mean over subject tokens of the input-embedding inner product with the
/// object token.
pub fn association_strength<F: Scalar>(
    model: &Transformer<F>,
    subject_tokens: &[usize],
    object_token: usize,
) -> f64 {
    let table = &model.weights.get("tok_embed").value;
    let obj = table.row(object_token);
    let mut sum = 0.0;
    for &t in subject_tokens {
        sum += dot_slices(table.row(t), obj).as_f64();
    }
    sum / subject_tokens.len() as f64
}

/// Fraction of the (unfiltered) noise pool that fails to make the model
/// prefer the true answer.
pub fn robustness(pool: &[NoiseSample], rule: RobustnessRule) -> Result<f64, ManifestationError> {
    if pool.is_empty() {
        return Err(ManifestationError::EmptyNoisePool);
    }
    let failures = pool
        .iter()
        .filter(|s| match rule {
            RobustnessRule::PrefersPredicted => s.y_star > 0.0,
            RobustnessRule::NotFlipped => s.y_star >= 0.0,
        })
        .count();
    Ok(failures as f64 / pool.len() as f64)
}

/// Entropy of the next-token distribution at the final prompt position.
pub fn prediction_uncertainty<F: Scalar>(
    model: &Transformer<F>,
    tokens: &[usize],
) -> Result<f64, ManifestationError> {
    let out = model.forward(tokens, &InterventionSet::new(), false)?;
    let dist = next_token_distribution(&out.logits);
    Ok(entropy(&dist)?)
}

/// All four features for one query; the noise pool is drawn by the tracer's
/// sampling procedure without the acceptance filter.
pub fn query_features<F: Scalar>(
    model: &Transformer<F>,
    tracer: &Tracer<F>,
    q: &HallucinationQuery,
    pool_size: usize,
    rule: RobustnessRule,
) -> Result<ManifestationFeatures, ManifestationError> {
    let subject_tokens: Vec<usize> =
        q.tokens[q.subject_first..=q.subject_last].to_vec();
    let pool = tracer.sample_noise_pool(q, pool_size)?;
    Ok(ManifestationFeatures {
        so_assoc: association_strength(model, &subject_tokens, q.true_object),
        so_prime_assoc: association_strength(model, &subject_tokens, q.predicted_object),
        robustness: robustness(&pool, rule)?,
        uncertainty: prediction_uncertainty(model, &q.tokens)?,
    })
}

/// Features for a labeled query set, in input order.
pub fn features_for_queries<F: Scalar>(
    model: &Transformer<F>,
    tracer: &Tracer<F>,
    labeled: &[(HallucinationQuery, Mechanism)],
    pool_size: usize,
    rule: RobustnessRule,
) -> Result<Vec<(String, Mechanism, ManifestationFeatures)>, ManifestationError> {
    labeled
        .par_iter()
        .map(|(q, mech)| {
            query_features(model, tracer, q, pool_size, rule)
                .map(|f| (q.id.clone(), *mech, f))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupFeatureMeans {
    pub count: usize,
    pub features: ManifestationFeatures,
}

/// Group means of all four features for the two mechanisms. Empty groups are
/// reported as None and flagged by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestationReport {
    pub early: Option<GroupFeatureMeans>,
    pub late: Option<GroupFeatureMeans>,
}

/// Reference group means measured on a 7B-parameter open-weights model at
/// full scale, emitted alongside desk-scale results for qualitative
/// comparison only; never a pass/fail target.
pub const REFERENCE_EARLY: ManifestationFeatures = ManifestationFeatures {
    so_assoc: 0.40,
    so_prime_assoc: 0.85,
    robustness: 0.78,
    uncertainty: 4.39,
};
pub const REFERENCE_LATE: ManifestationFeatures = ManifestationFeatures {
    so_assoc: 0.88,
    so_prime_assoc: 2.03,
    robustness: 0.51,
    uncertainty: 4.17,
};

pub fn manifestation_report(
    rows: &[(String, Mechanism, ManifestationFeatures)],
) -> ManifestationReport {
    let group = |mech: Mechanism| -> Option<GroupFeatureMeans> {
        let members: Vec<&ManifestationFeatures> = rows
            .iter()
            .filter(|(_, m, _)| *m == mech)
            .map(|(_, _, f)| f)
            .collect();
        if members.is_empty() {
            return None;
        }
        let n = members.len() as f64;
        Some(GroupFeatureMeans {
            count: members.len(),
            features: ManifestationFeatures {
                so_assoc: members.iter().map(|f| f.so_assoc).sum::<f64>() / n,
                so_prime_assoc: members.iter().map(|f| f.so_prime_assoc).sum::<f64>() / n,
                robustness: members.iter().map(|f| f.robustness).sum::<f64>() / n,
                uncertainty: members.iter().map(|f| f.uncertainty).sum::<f64>() / n,
            },
        })
    };
    ManifestationReport {
        early: group(Mechanism::EarlySite),
        late: group(Mechanism::LateSite),
    }
}
