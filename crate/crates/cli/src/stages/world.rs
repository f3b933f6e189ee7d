use anyhow::Result;

use hallucitrace_core::dataset::generate_world;

use crate::config::RunConfig;
use crate::paths::RunPaths;

pub fn run(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let _hash = super::echo_config(cfg, paths, "world-gen")?;
    let world = generate_world(&cfg.world)?;
    world.save(&paths.world)?;
    println!(
        "world gen: {} subjects, {} relations, {} triples, vocabulary {} -> {}",
        world.config.n_subjects,
        world.config.n_relations,
        world.triples.len(),
        world.vocab.len(),
        paths.world.display()
    );
    Ok(())
}
