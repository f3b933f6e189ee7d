//! Model evaluation over the query set: pick the top capitalized token,
//! disambiguate against acceptable objects, and split queries into factual,
//! hallucinating and discarded sets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::queries::QueryCandidate;
use super::world::World;
use super::DatasetError;
use crate::causal::HallucinationQuery;
use crate::intervene::InterventionSet;
use crate::model::{next_token_distribution, Transformer};
use crate::num::Scalar;
use crate::tensor::top_k;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryLabel {
    Factual,
    Hallucinating,
    Discarded,
}

impl QueryLabel {
    pub fn label(self) -> &'static str {
        match self {
            QueryLabel::Factual => "factual",
            QueryLabel::Hallucinating => "hallucinating",
            QueryLabel::Discarded => "discarded",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "factual" => Some(QueryLabel::Factual),
            "hallucinating" => Some(QueryLabel::Hallucinating),
            "discarded" => Some(QueryLabel::Discarded),
            _ => None,
        }
    }
}

/// Which token of a multi-word acceptable object the prediction must match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    /// predicted token must equal the first token of an acceptable object
    /// (the rule consistent with next-token prediction; default)
    Prefix,
    /// predicted token must equal the last token of an acceptable object
    Suffix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub match_rule: MatchRule,
    /// a query is discarded when no capitalized token appears among this
    /// many most likely next tokens
    pub top_k_discard: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            match_rule: MatchRule::Prefix,
            top_k_discard: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub query_id: String,
    pub label: QueryLabel,
    /// top capitalized token (absent for discarded queries)
    pub predicted: Option<usize>,
    /// log p(predicted) - log p(true object); absent for discarded queries
    pub y: Option<f64>,
}

/// The token an acceptable object must surface as, under the match rule.
fn object_match_token(
    world: &World,
    object: &str,
    rule: MatchRule,
) -> Result<usize, DatasetError> {
    let word = match rule {
        MatchRule::Prefix => object.split_whitespace().next(),
        MatchRule::Suffix => object.split_whitespace().last(),
    }
    .ok_or_else(|| DatasetError::Sizing(format!("empty object {object:?}")))?;
    Ok(world.vocab.id(word)?)
}

/// Evaluate every query; deterministic given weights and the alias map, and
/// independent per query (order never matters).
pub fn evaluate_queries<F: Scalar>(
    model: &Transformer<F>,
    world: &World,
    queries: &[QueryCandidate],
    settings: &EvalSettings,
) -> Result<Vec<EvalOutcome>, DatasetError> {
    let capitalized = world.vocab.capitalized_ids();
    if capitalized.is_empty() {
        return Err(DatasetError::Sizing(
            "vocabulary has no capitalized tokens".into(),
        ));
    }
    queries
        .par_iter()
        .map(|q| evaluate_one(model, world, q, settings, &capitalized))
        .collect()
}

fn evaluate_one<F: Scalar>(
    model: &Transformer<F>,
    world: &World,
    q: &QueryCandidate,
    settings: &EvalSettings,
    capitalized: &[usize],
) -> Result<EvalOutcome, DatasetError> {
    let out = model.forward(&q.tokens, &InterventionSet::new(), false)?;
    let dist = next_token_distribution(&out.logits);
    let probs = dist.data();

    let top = top_k(probs, settings.top_k_discard);
    if !top.iter().any(|&t| world.vocab.is_capitalized(t)) {
        return Ok(EvalOutcome {
            query_id: q.id.clone(),
            label: QueryLabel::Discarded,
            predicted: None,
            y: None,
        });
    }

    let mut predicted = capitalized[0];
    for &t in capitalized {
        if probs[t] > probs[predicted] {
            predicted = t;
        }
    }

    let triple = &world.triples[q.triple_id];
    let acceptable = world
        .aliases
        .acceptable(triple.subject_id, triple.relation_id)
        .ok_or_else(|| {
            DatasetError::Sizing(format!(
                "alias map is missing pair ({}, {})",
                triple.subject_id, triple.relation_id
            ))
        })?;
    let mut factual = false;
    for object in acceptable {
        if object_match_token(world, object, settings.match_rule)? == predicted {
            factual = true;
            break;
        }
    }

    let y = probs[predicted].as_f64().ln() - probs[q.true_object_token].as_f64().ln();
    Ok(EvalOutcome {
        query_id: q.id.clone(),
        label: if factual {
            QueryLabel::Factual
        } else {
            QueryLabel::Hallucinating
        },
        predicted: Some(predicted),
        y: Some(y),
    })
}

/// Attribution-ready queries from the hallucinating outcomes. Ties where the
/// predicted and true token are equally likely (y == 0) are skipped, since
/// the protocol requires a strict preference for the wrong answer.
pub fn hallucination_set(
    queries: &[QueryCandidate],
    outcomes: &[EvalOutcome],
) -> Vec<HallucinationQuery> {
    let mut out = Vec::new();
    for (q, o) in queries.iter().zip(outcomes.iter()) {
        debug_assert_eq!(q.id, o.query_id);
        if o.label != QueryLabel::Hallucinating {
            continue;
        }
        let (Some(predicted), Some(y)) = (o.predicted, o.y) else {
            continue;
        };
        if y <= 0.0 {
            continue;
        }
        if let Ok(hq) = HallucinationQuery::new(
            q.id.clone(),
            q.tokens.clone(),
            q.subject_first,
            q.subject_last,
            q.true_object_token,
            predicted,
        ) {
            out.push(hq);
        }
    }
    out
}
