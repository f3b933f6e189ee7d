use std::collections::BTreeMap;

use anyhow::Result;

use hallucitrace_core::dataset::QueryCandidate;
use hallucitrace_core::lens::{checkpoint_trajectory, GroupTag, LensQuery};

use crate::config::RunConfig;
use crate::paths::RunPaths;
use crate::report;

pub fn run(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let hash = super::echo_config(cfg, paths, "ckpt-esp")?;
    let world = super::load_world(paths)?;
    let grouped = super::lens::build_groups(cfg, paths, &world)?;

    let mut groups: BTreeMap<GroupTag, Vec<LensQuery>> = BTreeMap::new();
    for (tag, q) in &grouped {
        groups.entry(*tag).or_default().push(to_lens_query(q));
    }
    let groups: Vec<(GroupTag, Vec<LensQuery>)> = groups.into_iter().collect();

    let (points, warnings) = checkpoint_trajectory::<f32>(&paths.ckpt_dir(), &groups)?;
    for w in &warnings {
        eprintln!("ckpt-esp: {w}");
    }
    report::write_trajectory(&paths.trajectory(), &hash, &points)?;
    println!(
        "ckpt-esp: {} checkpoints x {} groups -> {}",
        points.len() / groups.len().max(1),
        groups.len(),
        paths.trajectory().display()
    );
    Ok(())
}

fn to_lens_query(q: &QueryCandidate) -> LensQuery {
    LensQuery {
        id: q.id.clone(),
        tokens: q.tokens.clone(),
        subject_last: q.subject_last,
        relation_end: q.relation_end,
        true_object: q.true_object_token,
    }
}
