use std::time::Duration;

use anyhow::{Context, Result};

use hallucitrace_core::dataset::{
    build_query_set, evaluate_queries, hallucination_set, merge_remote_objects, CorpusManifest,
    HttpFetcher, QueryCandidate, QueryLabel, RemoteResolver, World,
};

use crate::config::RunConfig;
use crate::paths::RunPaths;
use crate::report::{self, HallucinationRow, OutcomeRow};

/// The canonical prompt per triple: its lowest-indexed template.
pub fn primary_queries(world: &World) -> Result<Vec<QueryCandidate>> {
    Ok(build_query_set(world)?
        .into_iter()
        .filter(|q| q.template_idx == 0)
        .collect())
}

pub fn run(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let hash = super::echo_config(cfg, paths, "eval")?;
    let mut world = super::load_world(paths)?;
    let model = super::load_model(paths)?;
    anyhow::ensure!(
        model.cfg.vocab_size == world.vocab.len(),
        "model vocabulary size {} does not match world vocabulary {}",
        model.cfg.vocab_size,
        world.vocab.len()
    );

    if let Some(endpoint) = &cfg.eval.alias_endpoint {
        let fetcher = HttpFetcher::new(Duration::from_millis(cfg.eval.alias_timeout_ms));
        let mut resolver = RemoteResolver::new(endpoint, &paths.alias_cache(), &fetcher)?;
        let mut warned = 0usize;
        let triples = world.triples.clone();
        let subjects = world.subjects.clone();
        let phrases: Vec<String> =
            world.relations.iter().map(|r| r.phrase.clone()).collect();
        for t in &triples {
            let outcome = resolver.resolve(&subjects[t.subject_id], &phrases[t.relation_id]);
            if outcome.warning.is_some() {
                warned += 1;
                continue;
            }
            merge_remote_objects(
                &mut world.aliases,
                &world.vocab,
                t.subject_id,
                t.relation_id,
                &outcome.objects,
            );
        }
        if warned > 0 {
            eprintln!("eval: {warned} remote alias lookups fell back to the offline map");
        }
    }

    let queries = primary_queries(&world)?;
    let outcomes = evaluate_queries(&model, &world, &queries, &cfg.eval.settings)?;

    let outcome_rows: Vec<OutcomeRow> = outcomes
        .iter()
        .map(|o| {
            Ok(OutcomeRow {
                query_id: o.query_id.clone(),
                label: o.label,
                predicted: o
                    .predicted
                    .map(|t| world.vocab.token(t).map(str::to_string))
                    .transpose()?,
                y: o.y,
            })
        })
        .collect::<Result<_>>()?;
    report::write_outcomes(&paths.outcomes(), &hash, &outcome_rows)?;

    let hallucinated = hallucination_set(&queries, &outcomes);
    let by_id: std::collections::BTreeMap<&str, &QueryCandidate> =
        queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let hall_rows: Vec<HallucinationRow> = hallucinated
        .iter()
        .map(|h| {
            let q = by_id[h.id.as_str()];
            Ok(HallucinationRow {
                query_id: h.id.clone(),
                triple_id: q.triple_id,
                template_idx: q.template_idx,
                text: q.text.clone(),
                subject_first: h.subject_first,
                subject_last: h.subject_last,
                relation_end: h.relation_end,
                true_object: world.vocab.token(h.true_object)?.to_string(),
                predicted_object: world.vocab.token(h.predicted_object)?.to_string(),
            })
        })
        .collect::<Result<_>>()?;
    report::write_hallucinations(&paths.hallucinations(), &hash, &hall_rows)?;

    // accuracy summaries; high-frequency accuracy needs the corpus manifest
    let manifest = CorpusManifest::load(&paths.corpus_manifest())
        .with_context(|| "eval needs the corpus manifest for frequency statistics")?;
    let n = queries.len();
    let n_factual = outcomes.iter().filter(|o| o.label == QueryLabel::Factual).count();
    let n_hall = outcomes
        .iter()
        .filter(|o| o.label == QueryLabel::Hallucinating)
        .count();
    let n_discarded = n - n_factual - n_hall;
    let mut hf_total = 0usize;
    let mut hf_correct = 0usize;
    for (q, o) in queries.iter().zip(outcomes.iter()) {
        if manifest.triple_counts[q.triple_id] >= cfg.eval.hf_min_count {
            hf_total += 1;
            if o.label == QueryLabel::Factual {
                hf_correct += 1;
            }
        }
    }
    let accuracy = n_factual as f64 / n as f64;
    let hf_accuracy = if hf_total == 0 {
        0.0
    } else {
        hf_correct as f64 / hf_total as f64
    };
    report::write_metrics_csv(
        &paths.eval_summary(),
        &hash,
        &[
            ("n_queries".into(), n.to_string()),
            ("n_factual".into(), n_factual.to_string()),
            ("n_hallucinating".into(), n_hall.to_string()),
            ("n_discarded".into(), n_discarded.to_string()),
            ("accuracy".into(), accuracy.to_string()),
            ("hf_min_count".into(), cfg.eval.hf_min_count.to_string()),
            ("hf_n_queries".into(), hf_total.to_string()),
            ("hf_accuracy".into(), hf_accuracy.to_string()),
        ],
    )?;
    println!(
        "eval: {n} queries -> {n_factual} factual, {n_hall} hallucinating, {n_discarded} discarded (accuracy {accuracy:.3}, high-frequency {hf_accuracy:.3})"
    );
    Ok(())
}
