use anyhow::Result;

use hallucitrace_core::causal::{HallucinationQuery, Mechanism, Tracer};
use hallucitrace_core::manifestation::{
    features_for_queries, manifestation_report, REFERENCE_EARLY, REFERENCE_LATE,
};

use crate::config::RunConfig;
use crate::paths::RunPaths;
use crate::report::{self, FeatureRow, ManifestationRow};

pub fn run(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let hash = super::echo_config(cfg, paths, "manifest")?;
    let world = super::load_world(paths)?;
    let model = super::load_model(paths)?;
    let hall_rows = report::read_hallucinations(&paths.hallucinations())?;
    let labels = report::read_labels(&paths.labels())?;

    let mut labeled: Vec<(HallucinationQuery, Mechanism)> = Vec::new();
    for l in &labels {
        let Some(row) = hall_rows.iter().find(|r| r.query_id == l.query_id) else {
            continue;
        };
        labeled.push((super::query_from_row(&world, row)?, l.label));
    }

    let tracer = Tracer::new(&model, cfg.tracing.settings.clone(), cfg.seed);
    let rows = features_for_queries(
        &model,
        &tracer,
        &labeled,
        cfg.manifest.pool_size,
        cfg.manifest.robustness_rule,
    )?;
    let feature_rows: Vec<FeatureRow> = rows
        .iter()
        .map(|(id, mech, f)| FeatureRow {
            query_id: id.clone(),
            mechanism: *mech,
            features: *f,
        })
        .collect();
    report::write_features(&paths.features(), &hash, &feature_rows)?;

    let summary = manifestation_report(&rows);
    let mut table: Vec<ManifestationRow> = Vec::new();
    for (group, means) in [
        (Mechanism::EarlySite, &summary.early),
        (Mechanism::LateSite, &summary.late),
    ] {
        match means {
            Some(m) => table.push(ManifestationRow {
                source: "desk".into(),
                group,
                count: m.count,
                features: m.features,
            }),
            None => eprintln!("manifest: group {} is empty", group.label()),
        }
    }
    table.push(ManifestationRow {
        source: "reference".into(),
        group: Mechanism::EarlySite,
        count: 0,
        features: REFERENCE_EARLY,
    });
    table.push(ManifestationRow {
        source: "reference".into(),
        group: Mechanism::LateSite,
        count: 0,
        features: REFERENCE_LATE,
    });
    report::write_manifestation_csv(&paths.manifestation(), &hash, &table)?;
    println!(
        "manifest: {} labeled queries -> {}",
        feature_rows.len(),
        paths.manifestation().display()
    );
    Ok(())
}
