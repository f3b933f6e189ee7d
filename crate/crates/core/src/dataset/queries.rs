//! Cloze-style prompts derived from triples and templates, with the
//! subject-span bookkeeping the analyses need.

use super::world::World;
use super::DatasetError;

/// One prompt: a (triple, template) instantiation with the object removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryCandidate {
    pub id: String,
    pub triple_id: usize,
    pub template_idx: usize,
    pub text: String,
    pub tokens: Vec<usize>,
    pub subject_first: usize,
    pub subject_last: usize,
    /// last prompt position
    pub relation_end: usize,
    /// token id of the canonical object (single-word objects)
    pub true_object_token: usize,
}

/// One prompt per (triple, template), across all templates including the
/// held-out paraphrase template (callers filter by `template_idx`).
pub fn build_query_set(world: &World) -> Result<Vec<QueryCandidate>, DatasetError> {
    let mut out = Vec::with_capacity(world.triples.len() * world.config.templates_per_relation);
    for triple in &world.triples {
        let relation = &world.relations[triple.relation_id];
        for (template_idx, template) in relation.templates.iter().enumerate() {
            out.push(build_query(world, triple.id, template_idx, template)?);
        }
    }
    Ok(out)
}

fn build_query(
    world: &World,
    triple_id: usize,
    template_idx: usize,
    template: &str,
) -> Result<QueryCandidate, DatasetError> {
    let triple = &world.triples[triple_id];
    let template_err = |reason: &str| DatasetError::Template {
        relation_id: triple.relation_id,
        template_idx,
        reason: reason.to_string(),
    };
    let Some(body) = template.strip_suffix(" {o}") else {
        return Err(template_err("template must end with the object slot"));
    };
    let Some(subject_at) = body.find("{s}") else {
        return Err(template_err("template is missing the subject slot"));
    };
    let prefix = &body[..subject_at];
    let subject = &world.subjects[triple.subject_id];
    let text = body.replace("{s}", subject);

    let tokens = world.vocab.tokenize(&text)?;
    let n_prefix = prefix.split_whitespace().count();
    let n_subject = subject.split_whitespace().count();
    let subject_first = n_prefix;
    let subject_last = n_prefix + n_subject - 1;
    let relation_end = tokens.len() - 1;
    if subject_last >= relation_end {
        return Err(template_err("subject span must precede the prompt end"));
    }
    Ok(QueryCandidate {
        id: format!("t{triple_id}.p{template_idx}"),
        triple_id,
        template_idx,
        text,
        tokens,
        subject_first,
        subject_last,
        relation_end,
        true_object_token: world.vocab.id(&triple.object)?,
    })
}
