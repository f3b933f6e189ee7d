//! One module per pipeline stage. Every stage reads its inputs from the run
//! directory, writes its reports plus a config echo, and prints a short
//! summary line.

pub mod bundle;
pub mod ckpt;
pub mod classify;
pub mod corpus;
pub mod eval;
pub mod lens;
pub mod manifest;
pub mod mitigate;
pub mod trace;
pub mod train;
pub mod world;

use anyhow::{Context, Result};

use hallucitrace_core::causal::HallucinationQuery;
use hallucitrace_core::dataset::World;
use hallucitrace_core::Transformer;

use crate::config::RunConfig;
use crate::paths::RunPaths;
use crate::report::HallucinationRow;

/// Write the effective config next to the stage outputs and return its hash.
pub fn echo_config(cfg: &RunConfig, paths: &RunPaths, stage: &str) -> Result<String> {
    crate::paths::ensure_dir(&paths.out)?;
    let hash = cfg.hash();
    let echo = format!("# config_hash = \"{hash}\"\n{}", cfg.to_toml());
    std::fs::write(paths.config_echo(stage), echo)?;
    Ok(hash)
}

pub fn load_world(paths: &RunPaths) -> Result<World> {
    World::load(&paths.world).with_context(|| format!("loading world {}", paths.world.display()))
}

pub fn load_model(paths: &RunPaths) -> Result<Transformer<f32>> {
    Transformer::load(&paths.model)
        .with_context(|| format!("loading model {}", paths.model.display()))
}

/// Rebuild an attribution-ready query from its stored row.
pub fn query_from_row(world: &World, row: &HallucinationRow) -> Result<HallucinationQuery> {
    let tokens = world.vocab.tokenize(&row.text)?;
    let true_object = world.vocab.id(&row.true_object)?;
    let predicted = world.vocab.id(&row.predicted_object)?;
    Ok(HallucinationQuery::new(
        row.query_id.clone(),
        tokens,
        row.subject_first,
        row.subject_last,
        true_object,
        predicted,
    )?)
}
