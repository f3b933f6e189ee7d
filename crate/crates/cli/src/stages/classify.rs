use anyhow::{Context, Result};

use hallucitrace_core::causal::{relative_ie, Mechanism};

use crate::config::RunConfig;
use crate::paths::RunPaths;
use crate::report::{self, LabelRow};

pub fn run(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let hash = super::echo_config(cfg, paths, "classify")?;
    let world = super::load_world(paths)?;
    let rows = report::read_hallucinations(&paths.hallucinations())?;
    let ie_rows = report::read_per_query_ie(&paths.per_query_ie())?;
    let grids = report::grids_from_ie_rows(&ie_rows)?;
    let kinds = cfg.tracing.resolved_kinds()?;

    let mut label_rows = Vec::new();
    for row in &rows {
        let Some(grid) = grids.get(&row.query_id) else {
            continue; // not traced
        };
        let q = super::query_from_row(&world, row)
            .with_context(|| format!("rebuilding query {}", row.query_id))?;
        let label = relative_ie(grid, &q, &kinds)?;
        label_rows.push(LabelRow {
            query_id: row.query_id.clone(),
            delta_ie: label.delta_ie,
            label: label.label,
        });
    }
    report::write_labels(&paths.labels(), &hash, &label_rows)?;
    let early = label_rows
        .iter()
        .filter(|r| r.label == Mechanism::EarlySite)
        .count();
    println!(
        "classify: {} queries -> {} early-site, {} late-site -> {}",
        label_rows.len(),
        early,
        label_rows.len() - early,
        paths.labels().display()
    );
    Ok(())
}
