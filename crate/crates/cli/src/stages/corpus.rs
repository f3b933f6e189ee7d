use anyhow::Result;

use hallucitrace_core::dataset::{generate_corpus, save_corpus};

use crate::config::RunConfig;
use crate::paths::RunPaths;

pub fn run(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let _hash = super::echo_config(cfg, paths, "corpus-gen")?;
    let world = super::load_world(paths)?;
    let (sentences, manifest) = generate_corpus(&world, &cfg.corpus, cfg.seed)?;
    save_corpus(&paths.corpus(), &sentences)?;
    manifest.save(&paths.corpus_manifest())?;
    println!(
        "corpus gen: {} sentences ({} fact, {} distractor) -> {}",
        manifest.n_sentences,
        manifest.triple_counts.iter().sum::<usize>(),
        manifest.distractor_counts.values().map(|(_, c)| c).sum::<usize>(),
        paths.corpus().display()
    );
    Ok(())
}
