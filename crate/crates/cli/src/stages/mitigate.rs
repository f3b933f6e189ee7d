use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};

use hallucitrace_core::dataset::{build_query_set, QueryCandidate, QueryLabel, World};
use hallucitrace_core::mitigate::{
    evaluate_icl, evaluate_mitigation, sft_baseline, train_mhm, TrainExample,
};
use hallucitrace_core::Transformer;

use crate::config::RunConfig;
use crate::paths::RunPaths;
use crate::report::{self, MitigationReportRow, TrainExampleRow};

fn load_examples(cfg: &RunConfig, paths: &RunPaths, world: &World) -> Result<Vec<TrainExample>> {
    let rows = report::read_hallucinations(&paths.hallucinations())?;
    let selected = &rows[..rows.len().min(cfg.mitigate.max_train_examples)];
    selected
        .iter()
        .map(|r| {
            Ok(TrainExample::new(
                r.query_id.clone(),
                world.vocab.tokenize(&r.text)?,
                world.vocab.id(&r.true_object)?,
                world.vocab.id(&r.predicted_object)?,
            )?)
        })
        .collect()
}

pub fn run_train(cfg: &RunConfig, paths: &RunPaths, method: &str) -> Result<()> {
    let hash = super::echo_config(cfg, paths, &format!("mitigate-train-{method}"))?;
    let world = super::load_world(paths)?;
    let mut model = super::load_model(paths)?;
    let examples = load_examples(cfg, paths, &world)?;
    if examples.is_empty() {
        bail!("no hallucinated queries to repair; run `eval` first");
    }

    let log = match method {
        "mhm" => train_mhm(&mut model, &examples, &cfg.mitigate.mhm, cfg.seed)?,
        "sft" => sft_baseline(&mut model, &examples, &cfg.mitigate.mhm, cfg.seed)?,
        other => bail!("unknown mitigation method {other:?} (expected mhm or sft)"),
    };

    crate::paths::ensure_dir(&paths.mitigate_dir())?;
    model.save(&paths.mitigated_model(method))?;
    report::write_mitigation_log(&paths.mitigate_log(method), &hash, &log)?;

    let rows = report::read_hallucinations(&paths.hallucinations())?;
    let example_rows: Vec<TrainExampleRow> = rows
        .iter()
        .take(examples.len())
        .map(|r| TrainExampleRow {
            query_id: r.query_id.clone(),
            text: r.text.clone(),
            true_object: r.true_object.clone(),
            predicted_object: r.predicted_object.clone(),
        })
        .collect();
    report::write_train_examples(&paths.train_examples(), &hash, &example_rows)?;

    println!(
        "mitigate train ({method}): {} examples, combined loss {:.4} -> {:.4} -> {}",
        examples.len(),
        log.first().map(|s| s.combined).unwrap_or(f64::NAN),
        log.last().map(|s| s.combined).unwrap_or(f64::NAN),
        paths.mitigated_model(method).display()
    );
    Ok(())
}

/// Paraphrase prompts for the trained triples: the held-out template of each
/// relation, never seen in the corpus or the repair set.
fn paraphrase_set(
    world: &World,
    trained: &[TrainExampleRow],
    hall_rows: &[report::HallucinationRow],
) -> Result<Vec<QueryCandidate>> {
    let all = build_query_set(world)?;
    let holdout = world.config.templates_per_relation - 1;
    let by_key: BTreeMap<(usize, usize), QueryCandidate> = all
        .into_iter()
        .map(|q| ((q.triple_id, q.template_idx), q))
        .collect();
    let triple_of: BTreeMap<&str, usize> = hall_rows
        .iter()
        .map(|r| (r.query_id.as_str(), r.triple_id))
        .collect();
    trained
        .iter()
        .map(|t| {
            let triple = triple_of
                .get(t.query_id.as_str())
                .context("trained example missing from the hallucination set")?;
            by_key
                .get(&(*triple, holdout))
                .cloned()
                .context("held-out template query missing")
        })
        .collect()
}

pub fn run_eval(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let hash = super::echo_config(cfg, paths, "mitigate-eval")?;
    let world = super::load_world(paths)?;
    let base = super::load_model(paths)?;
    let hall_rows = report::read_hallucinations(&paths.hallucinations())?;
    let trained = report::read_train_examples(&paths.train_examples())
        .context("mitigate eval needs `mitigate train` outputs")?;
    let outcomes = report::read_outcomes(&paths.outcomes())?;

    let paraphrases = paraphrase_set(&world, &trained, &hall_rows)?;
    let primary: BTreeMap<String, QueryCandidate> = super::eval::primary_queries(&world)?
        .into_iter()
        .map(|q| (q.id.clone(), q))
        .collect();
    let correct: Vec<QueryCandidate> = outcomes
        .iter()
        .filter(|o| o.label == QueryLabel::Factual)
        .map(|o| primary[&o.query_id].clone())
        .collect();
    if correct.is_empty() {
        bail!("the model answered nothing correctly; specificity is undefined");
    }

    let mut rows: Vec<MitigationReportRow> = Vec::new();
    let settings = &cfg.eval.settings;

    let base_result = evaluate_mitigation(&base, &base, &world, &paraphrases, &correct, settings)?;
    rows.push(MitigationReportRow {
        method: "base".into(),
        effectiveness: base_result.effectiveness,
        specificity: base_result.specificity,
    });

    for method in ["mhm", "sft"] {
        let path = paths.mitigated_model(method);
        if !path.exists() {
            continue;
        }
        let after = Transformer::<f32>::load(&path)?;
        let result = evaluate_mitigation(&base, &after, &world, &paraphrases, &correct, settings)?;
        rows.push(MitigationReportRow {
            method: method.into(),
            effectiveness: result.effectiveness,
            specificity: result.specificity,
        });
    }

    // few-shot prompting baseline on the unmodified weights
    let exemplars: Vec<(Vec<usize>, usize)> = trained
        .iter()
        .take(cfg.mitigate.icl_shots)
        .map(|t| {
            Ok((
                world.vocab.tokenize(&t.text)?,
                world.vocab.id(&t.true_object)?,
            ))
        })
        .collect::<Result<_>>()?;
    if !exemplars.is_empty() {
        let eff = evaluate_icl(&base, &world, &exemplars, &paraphrases, settings)?;
        let spec = evaluate_icl(&base, &world, &exemplars, &correct, settings)?;
        rows.push(MitigationReportRow {
            method: format!("icl_{}shot", exemplars.len()),
            effectiveness: eff,
            specificity: spec,
        });
    }

    report::write_mitigation_report(&paths.mitigation_report(), &hash, &rows)?;
    for r in &rows {
        println!(
            "mitigate eval: {:<10} effectiveness {:.3} specificity {:.3}",
            r.method, r.effectiveness, r.specificity
        );
    }
    Ok(())
}
