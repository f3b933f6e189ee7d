use anyhow::Result;

use hallucitrace_core::causal::{average_indirect_effects, HallucinationQuery, IeGrid, Tracer};
use hallucitrace_core::intervene::SiteKind;

use crate::config::RunConfig;
use crate::paths::RunPaths;
use crate::report::{self, IeRow, NoiseSummaryRow};

pub fn run(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let hash = super::echo_config(cfg, paths, "trace")?;
    let world = super::load_world(paths)?;
    let model = super::load_model(paths)?;
    let rows = report::read_hallucinations(&paths.hallucinations())?;
    let selected = &rows[..rows.len().min(cfg.tracing.max_queries)];

    let tracer = Tracer::new(&model, cfg.tracing.settings.clone(), cfg.seed);
    println!(
        "trace: {} queries, sigma {:.4}, {} noises per query",
        selected.len(),
        tracer.sigma,
        cfg.tracing.settings.n_noises
    );

    let mut ie_rows: Vec<IeRow> = Vec::new();
    let mut noise_rows: Vec<NoiseSummaryRow> = Vec::new();
    let mut traced: Vec<(HallucinationQuery, IeGrid)> = Vec::new();
    let mut skipped = 0usize;
    for row in selected {
        let q = super::query_from_row(&world, row)?;
        match tracer.trace_query_lenient(&q) {
            Ok((outcome, under_sampled)) => {
                noise_rows.push(NoiseSummaryRow {
                    query_id: q.id.clone(),
                    y: outcome.y,
                    attempts: outcome.attempts,
                    n_accepted: outcome.accepted.len(),
                    acceptance_rate: outcome.acceptance_rate,
                    under_sampled,
                    samples: outcome.accepted.iter().map(|s| (s.seed, s.y_star)).collect(),
                });
                for &kind in &SiteKind::ALL {
                    for layer in 1..=model.cfg.n_layers {
                        for position in 0..q.tokens.len() {
                            ie_rows.push(IeRow {
                                query_id: q.id.clone(),
                                kind,
                                layer,
                                position,
                                ie: outcome.ie.get(kind, layer, position),
                            });
                        }
                    }
                }
                traced.push((q, outcome.ie));
            }
            Err(e) => {
                skipped += 1;
                noise_rows.push(NoiseSummaryRow {
                    query_id: q.id.clone(),
                    y: f64::NAN,
                    attempts: 0,
                    n_accepted: 0,
                    acceptance_rate: 0.0,
                    under_sampled: true,
                    samples: Vec::new(),
                });
                eprintln!("trace: skipping {}: {e}", q.id);
            }
        }
    }

    report::write_per_query_ie(&paths.per_query_ie(), &hash, &ie_rows)?;
    report::write_noise_summary(&paths.noise_summary(), &hash, &noise_rows)?;

    if !traced.is_empty() {
        let aie = average_indirect_effects(&traced, model.cfg.n_layers)?;
        for &kind in &SiteKind::ALL {
            report::write_aie_csv(&paths.aie_csv(kind.label()), &hash, &aie, kind)?;
        }
        report::write_aie_counts(&paths.aie_counts(), &hash, &aie)?;
    }
    println!(
        "trace: {} queries traced, {} skipped -> {}",
        traced.len(),
        skipped,
        paths.trace_dir().display()
    );
    Ok(())
}
