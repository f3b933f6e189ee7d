use anyhow::{Context, Result};

use hallucitrace_core::dataset::load_corpus;
use hallucitrace_core::train::train_lm;
use hallucitrace_core::Transformer;

use crate::config::RunConfig;
use crate::paths::RunPaths;
use crate::report;

pub fn run(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let hash = super::echo_config(cfg, paths, "train")?;
    let world = super::load_world(paths)?;
    let sentences = load_corpus(&paths.corpus())
        .with_context(|| format!("loading corpus {}", paths.corpus().display()))?;
    let sequences: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| world.vocab.tokenize(s))
        .collect::<Result<_, _>>()?;

    let model_cfg = cfg.model_config(world.vocab.len())?;
    let mut model = Transformer::<f32>::init(model_cfg);
    println!(
        "train: {} parameters, {} sequences, {} epochs",
        model.weights.param_count(),
        sequences.len(),
        cfg.train.epochs
    );
    let log = train_lm(
        &mut model,
        &sequences,
        &cfg.train,
        cfg.seed,
        Some(&paths.ckpt_dir()),
    )?;
    model.save(&paths.model)?;
    let rows: Vec<(u64, f64)> = log.iter().map(|r| (r.step, r.loss)).collect();
    report::write_train_log(&paths.train_log(), &hash, &rows)?;
    println!(
        "train: loss {:.4} -> {:.4} over {} steps -> {}",
        log.first().map(|r| r.loss).unwrap_or(f64::NAN),
        log.last().map(|r| r.loss).unwrap_or(f64::NAN),
        log.len(),
        paths.model.display()
    );
    Ok(())
}
