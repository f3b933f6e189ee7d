use std::collections::BTreeMap;

use anyhow::Result;

use hallucitrace_core::causal::Mechanism;
use hallucitrace_core::dataset::{QueryCandidate, QueryLabel, World};
use hallucitrace_core::intervene::InterventionSet;
use hallucitrace_core::lens::{group_esp_profile, EspLayers, GroupTag, Lens, LensQuery};
use hallucitrace_core::Transformer;

use crate::config::RunConfig;
use crate::paths::RunPaths;
use crate::report::{self, EspRow, ProfileRow, RankRow};

fn lens_query(q: &QueryCandidate) -> LensQuery {
    LensQuery {
        id: q.id.clone(),
        tokens: q.tokens.clone(),
        subject_last: q.subject_last,
        relation_end: q.relation_end,
        true_object: q.true_object_token,
    }
}

/// The labeled query groups every projection stage works over: factual
/// queries (capped) plus the classified hallucinations.
pub fn build_groups(
    cfg: &RunConfig,
    paths: &RunPaths,
    world: &World,
) -> Result<Vec<(GroupTag, QueryCandidate)>> {
    let outcomes = report::read_outcomes(&paths.outcomes())?;
    let labels = report::read_labels(&paths.labels())?;
    let by_id: BTreeMap<String, QueryCandidate> = super::eval::primary_queries(world)?
        .into_iter()
        .map(|q| (q.id.clone(), q))
        .collect();

    let mut out = Vec::new();
    let mut factual = 0usize;
    for o in &outcomes {
        if o.label == QueryLabel::Factual && factual < cfg.lens.max_factual_queries {
            out.push((GroupTag::Factual, by_id[&o.query_id].clone()));
            factual += 1;
        }
    }
    for l in &labels {
        let tag = match l.label {
            Mechanism::EarlySite => GroupTag::EarlySite,
            Mechanism::LateSite => GroupTag::LateSite,
        };
        out.push((tag, by_id[&l.query_id].clone()));
    }
    Ok(out)
}

pub fn run_esp(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let hash = super::echo_config(cfg, paths, "lens-esp")?;
    let world = super::load_world(paths)?;
    let model = super::load_model(paths)?;
    let lens = Lens::new(&model);
    let groups = build_groups(cfg, paths, &world)?;

    let mut esp_rows: Vec<EspRow> = Vec::new();
    let mut samples: Vec<(GroupTag, EspLayers)> = Vec::new();
    let mut lens_acc: BTreeMap<(GroupTag, &str, usize), (f64, usize)> = BTreeMap::new();
    for (tag, q) in &groups {
        let lq = lens_query(q);
        let out = model.forward(&lq.tokens, &InterventionSet::new(), true)?;
        let trace = out.trace.expect("capture requested");
        let esp = lens.esp_layers(&trace, &lq);
        let metrics = lens.lens_layers(&trace, &lq, cfg.lens.top_attributes)?;
        for layer in 1..=model.cfg.n_layers {
            esp_rows.push(EspRow {
                query_id: q.id.clone(),
                group: *tag,
                layer,
                esp_mlp: esp.mlp[layer - 1],
                esp_attn: esp.attn[layer - 1],
                i_m: metrics.i_m[layer - 1],
                i_a: metrics.i_a[layer - 1],
            });
            for (metric, value) in [("i_m", metrics.i_m[layer - 1]), ("i_a", metrics.i_a[layer - 1])]
            {
                let e = lens_acc.entry((*tag, metric, layer)).or_insert((0.0, 0));
                e.0 += value;
                e.1 += 1;
            }
        }
        samples.push((*tag, esp));
    }

    report::write_esp_per_query(&paths.esp_per_query(), &hash, &esp_rows)?;

    let (profiles, empty) = group_esp_profile(&samples)?;
    if !empty.is_empty() {
        let names: Vec<&str> = empty.iter().map(|g| g.label()).collect();
        eprintln!("lens esp: empty groups omitted: {}", names.join(", "));
    }
    let mut profile_rows = Vec::new();
    for p in &profiles {
        for (i, mean) in p.per_layer_mean.iter().enumerate() {
            profile_rows.push(ProfileRow {
                group: p.group,
                metric: p.kind.label().to_string(),
                layer: i + 1,
                mean: *mean,
                count: p.count,
            });
        }
    }
    report::write_profile_csv(&paths.esp_profile(), &hash, &profile_rows)?;

    let lens_rows: Vec<ProfileRow> = lens_acc
        .into_iter()
        .map(|((group, metric, layer), (sum, n))| ProfileRow {
            group,
            metric: metric.to_string(),
            layer,
            mean: sum / n as f64,
            count: n,
        })
        .collect();
    report::write_profile_csv(&paths.lens_profile(), &hash, &lens_rows)?;

    println!(
        "lens esp: {} queries over {} groups -> {}",
        groups.len(),
        profiles.len() / 2,
        paths.esp_profile().display()
    );
    Ok(())
}

pub fn run_rank(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let hash = super::echo_config(cfg, paths, "lens-rank")?;
    let world = super::load_world(paths)?;
    let model: Transformer<f32> = super::load_model(paths)?;
    let lens = Lens::new(&model);
    let outcomes = report::read_outcomes(&paths.outcomes())?;
    let by_id: BTreeMap<String, QueryCandidate> = super::eval::primary_queries(&world)?
        .into_iter()
        .map(|q| (q.id.clone(), q))
        .collect();

    let mut rows: Vec<RankRow> = Vec::new();
    for o in outcomes
        .iter()
        .filter(|o| o.label != QueryLabel::Discarded)
        .take(cfg.lens.max_rank_queries)
    {
        let q = &by_id[&o.query_id];
        let out = model.forward(&q.tokens, &InterventionSet::new(), true)?;
        let record = lens.min_object_rank(
            &q.id,
            &out.trace.expect("capture requested"),
            q.subject_last,
            q.true_object_token,
            cfg.lens.rank_threshold_frac,
        );
        rows.push(RankRow {
            query_id: q.id.clone(),
            label: o.label,
            min_rank: record.min_rank,
            threshold: record.threshold,
            within_threshold: record.within_threshold,
        });
    }
    report::write_ranks(&paths.ranks(), &hash, &rows)?;
    let within = rows.iter().filter(|r| r.within_threshold).count();
    println!(
        "lens rank: {} queries, {} within the top {:.1}% threshold -> {}",
        rows.len(),
        within,
        cfg.lens.rank_threshold_frac * 100.0,
        paths.ranks().display()
    );
    Ok(())
}
