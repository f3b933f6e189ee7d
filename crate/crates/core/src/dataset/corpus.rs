//! Training corpus with a long-tailed subject distribution and confounded
//! co-occurrences — the two levers that later surface as the two failure
//! mechanisms (underlearned facts vs. hijacked associations).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use super::world::{World, NEUTRAL_SKELETONS};
use super::DatasetError;
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_fact_sentences: usize,
    /// chance that a confounded subject's fact sentence also emits a
    /// distractor co-occurrence sentence
    pub distractor_prob: f64,
    /// filler sentences as a fraction of fact sentences
    pub filler_fraction: f64,
    /// fraction of fillers that are long multi-clause lines (trains the
    /// position embeddings beyond single-fact lengths)
    pub long_line_fraction: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_fact_sentences: 24_000,
            distractor_prob: 0.6,
            filler_fraction: 0.12,
            long_line_fraction: 0.25,
        }
    }
}

/// Per-triple and per-distractor sentence counts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusManifest {
    pub triple_counts: Vec<usize>,
    /// subject_id -> (distractor object, count)
    pub distractor_counts: BTreeMap<usize, (String, usize)>,
    pub n_sentences: usize,
}

impl CorpusManifest {
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut s = String::new();
        for (id, count) in self.triple_counts.iter().enumerate() {
            let _ = writeln!(s, "triple\t{id}\t{count}");
        }
        for (sid, (obj, count)) in &self.distractor_counts {
            let _ = writeln!(s, "distractor\t{sid}\t{obj}\t{count}");
        }
        let _ = writeln!(s, "total\t{}", self.n_sentences);
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        let mut out = CorpusManifest::default();
        for (ln, line) in text.lines().enumerate() {
            let bad = |reason: &str| DatasetError::WorldFormat {
                line: ln + 1,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            match fields[0] {
                "triple" => {
                    let id: usize = fields[1].parse().map_err(|_| bad("bad triple id"))?;
                    if id != out.triple_counts.len() {
                        return Err(bad("triple ids must be dense"));
                    }
                    out.triple_counts
                        .push(fields[2].parse().map_err(|_| bad("bad count"))?);
                }
                "distractor" => {
                    let sid: usize = fields[1].parse().map_err(|_| bad("bad subject id"))?;
                    let count: usize = fields[3].parse().map_err(|_| bad("bad count"))?;
                    out.distractor_counts
                        .insert(sid, (fields[2].to_string(), count));
                }
                "total" => {
                    out.n_sentences = fields[1].parse().map_err(|_| bad("bad total"))?;
                }
                _ => return Err(bad("unknown manifest record")),
            }
        }
        Ok(out)
    }
}

fn instantiate(template: &str, subject: &str, object: &str) -> String {
    template.replace("{s}", subject).replace("{o}", object)
}

/// Generate the training sentences plus the frequency manifest. Subject
/// frequency follows the world's Zipf exponent; confounded subjects also
/// co-occur with their distractor object in relation-free sentences.
pub fn generate_corpus(
    world: &World,
    cfg: &CorpusConfig,
    seed: u64,
) -> Result<(Vec<String>, CorpusManifest), DatasetError> {
    let mut rng = rng_for(seed, stream::CORPUS);
    let n_subjects = world.config.n_subjects;
    let zipf = Zipf::new(n_subjects as f64, world.config.subject_zipf_exponent)
        .map_err(|e| DatasetError::Sizing(format!("bad zipf parameters: {e}")))?;
    let n_train_templates = world.config.templates_per_relation - 1;

    let mut sentences = Vec::new();
    let mut manifest = CorpusManifest {
        triple_counts: vec![0; world.triples.len()],
        ..CorpusManifest::default()
    };

    for _ in 0..cfg.n_fact_sentences {
        let rank: f64 = zipf.sample(&mut rng);
        let subject_id = (rank as usize - 1).min(n_subjects - 1);
        let relation_id = rng.random_range(0..world.config.n_relations);
        let template_idx = rng.random_range(0..n_train_templates);
        let triple = &world.triples[subject_id * world.config.n_relations + relation_id];
        let template = &world.relations[relation_id].templates[template_idx];
        sentences.push(instantiate(
            template,
            &world.subjects[subject_id],
            &triple.object,
        ));
        manifest.triple_counts[triple.id] += 1;

        if let Some(distractor) = world.confounders.get(&subject_id) {
            if rng.random::<f64>() < cfg.distractor_prob {
                let skeleton = NEUTRAL_SKELETONS[rng.random_range(0..NEUTRAL_SKELETONS.len())];
                sentences.push(instantiate(
                    skeleton,
                    &world.subjects[subject_id],
                    distractor,
                ));
                manifest
                    .distractor_counts
                    .entry(subject_id)
                    .or_insert_with(|| (distractor.clone(), 0))
                    .1 += 1;
            }
        }
    }

    let n_filler = (cfg.filler_fraction * cfg.n_fact_sentences as f64).round() as usize;
    let caps = &world.filler_capitalized;
    let lows = &world.filler_lowercase;
    for _ in 0..n_filler {
        let short = |rng: &mut crate::rng::Rng| {
            let skeleton = NEUTRAL_SKELETONS[rng.random_range(0..NEUTRAL_SKELETONS.len())];
            let a = &caps[rng.random_range(0..caps.len())];
            let b = &caps[rng.random_range(0..caps.len())];
            instantiate(skeleton, a, b)
        };
        if rng.random::<f64>() < cfg.long_line_fraction {
            let clauses = rng.random_range(4..=8);
            let parts: Vec<String> = (0..clauses).map(|_| short(&mut rng)).collect();
            sentences.push(parts.join(" . "));
        } else if !lows.is_empty() && rng.random::<f64>() < 0.3 {
            let n = rng.random_range(3..=7);
            let words: Vec<&str> = (0..n)
                .map(|_| lows[rng.random_range(0..lows.len())].as_str())
                .collect();
            sentences.push(words.join(" "));
        } else {
            sentences.push(short(&mut rng));
        }
    }

    manifest.n_sentences = sentences.len();
    Ok((sentences, manifest))
}

pub fn save_corpus(path: &Path, sentences: &[String]) -> Result<(), DatasetError> {
    let mut s = String::with_capacity(sentences.len() * 32);
    for line in sentences {
        s.push_str(line);
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Vec<String>, DatasetError> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(|l| l.to_string())
        .collect())
}
