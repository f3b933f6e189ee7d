//! The synthetic fact world: subjects, many-to-one relations, templates,
//! acceptable-answer sets and a closed vocabulary.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::names::NameGen;
use super::DatasetError;
use crate::model::Vocabulary;
use crate::rng::{rng_for, stream};

/// Sentence skeletons for fact statements. Every skeleton ends in the object
/// slot so prompts are proper next-token queries.
const FACT_SKELETONS: [&str; 6] = [
    "{s} is the {rw} of {o}",
    "The {rw} of {s} is {o}",
    "{s} has a {rw} called {o}",
    "People say the {rw} of {s} is {o}",
    "Everyone knows the {rw} of {s} is {o}",
    "{s} keeps its {rw} with {o}",
];

/// Relation-free co-occurrence skeletons used for confounder and filler
/// sentences.
pub const NEUTRAL_SKELETONS: [&str; 3] = [
    "{s} appears beside {o}",
    "{s} stands near {o}",
    "{s} and {o}",
];

/// Words every world contains regardless of the generated names.
const BASE_WORDS: [&str; 22] = [
    "is", "the", "The", "of", "has", "a", "called", "People", "say", "Everyone", "knows",
    "keeps", "its", "with", "appears", "beside", "stands", "near", "and", "Question:",
    "Answer:", ".",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_subjects: usize,
    pub n_relations: usize,
    pub n_objects_per_relation: usize,
    /// templates per relation; the highest-indexed one is held out of the
    /// training corpus and reserved for paraphrase evaluation
    pub templates_per_relation: usize,
    pub subject_zipf_exponent: f64,
    /// fraction of subjects co-occurring heavily with a wrong object
    pub confounder_rate: f64,
    /// fraction of triples with an extra acceptable object
    pub alias_fraction: f64,
    /// pad the vocabulary with unused names toward this size
    pub vocab_target: usize,
    /// filled from the run-wide seed when loaded from a run config
    #[serde(default)]
    pub seed: u64,
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        for (name, v) in [
            ("n_subjects", self.n_subjects),
            ("n_relations", self.n_relations),
            ("n_objects_per_relation", self.n_objects_per_relation),
            ("templates_per_relation", self.templates_per_relation),
        ] {
            if v == 0 {
                return Err(DatasetError::Sizing(format!("{name} must be positive")));
            }
        }
        if self.templates_per_relation < 3 {
            return Err(DatasetError::Sizing(
                "templates_per_relation must be at least 3 (training, query, held-out)".into(),
            ));
        }
        if self.templates_per_relation > FACT_SKELETONS.len() {
            return Err(DatasetError::Sizing(format!(
                "at most {} templates per relation are available",
                FACT_SKELETONS.len()
            )));
        }
        for (name, v) in [
            ("confounder_rate", self.confounder_rate),
            ("alias_fraction", self.alias_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DatasetError::Sizing(format!("{name} must lie in [0,1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationSpec {
    pub id: usize,
    /// the generated relation noun phrase substituted for {rw}
    pub phrase: String,
    /// concrete templates with {s} and {o} slots
    pub templates: Vec<String>,
}

impl RelationSpec {
    /// Index of the held-out paraphrase template.
    pub fn holdout_template(&self) -> usize {
        self.templates.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeTriple {
    pub id: usize,
    pub subject_id: usize,
    pub relation_id: usize,
    pub object: String,
}

/// (subject, relation) -> acceptable object words; always contains the
/// canonical object of every triple.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AliasMap {
    entries: BTreeMap<(usize, usize), BTreeSet<String>>,
}

impl AliasMap {
    pub fn insert(&mut self, subject_id: usize, relation_id: usize, object: String) {
        self.entries
            .entry((subject_id, relation_id))
            .or_default()
            .insert(object);
    }

    pub fn acceptable(&self, subject_id: usize, relation_id: usize) -> Option<&BTreeSet<String>> {
        self.entries.get(&(subject_id, relation_id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &BTreeSet<String>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub vocab: Vocabulary,
    pub subjects: Vec<String>,
    pub relations: Vec<RelationSpec>,
    pub triples: Vec<KnowledgeTriple>,
    pub aliases: AliasMap,
    /// subject_id -> distractor object for confounded subjects
    pub confounders: BTreeMap<usize, String>,
    /// capitalized names that appear only in filler sentences
    pub filler_capitalized: Vec<String>,
    pub filler_lowercase: Vec<String>,
}

impl World {
    pub fn triple_for(&self, subject_id: usize, relation_id: usize) -> Option<&KnowledgeTriple> {
        self.triples
            .iter()
            .find(|t| t.subject_id == subject_id && t.relation_id == relation_id)
    }

    pub fn subject_words(&self, subject_id: usize) -> Vec<&str> {
        self.subjects[subject_id].split_whitespace().collect()
    }
}

/// Build a world deterministically from its config.
pub fn generate_world(config: &WorldConfig) -> Result<World, DatasetError> {
    config.validate()?;
    let mut rng = rng_for(config.seed, stream::WORLD);
    let mut names = NameGen::new(
        rng_for(config.seed, stream::WORLD),
        BASE_WORDS.iter().map(|w| w.to_string()),
    );
    // names and structure draw from separate streams so that resizing one
    // pool does not reshuffle the other
    let _ = rng.random::<u64>();

    let mut relations = Vec::with_capacity(config.n_relations);
    for id in 0..config.n_relations {
        let words = if id % 2 == 0 { 1 } else { 2 };
        let mut phrase = String::new();
        for w in 0..words {
            if w > 0 {
                phrase.push(' ');
            }
            phrase.push_str(&names.lowercase().map_err(DatasetError::Sizing)?);
        }
        let templates: Vec<String> = (0..config.templates_per_relation)
            .map(|t| FACT_SKELETONS[(id + t) % FACT_SKELETONS.len()].replace("{rw}", &phrase))
            .collect();
        relations.push(RelationSpec {
            id,
            phrase,
            templates,
        });
    }

    let mut object_pools: Vec<Vec<String>> = Vec::with_capacity(config.n_relations);
    for _ in 0..config.n_relations {
        let pool: Result<Vec<String>, String> = (0..config.n_objects_per_relation)
            .map(|_| names.capitalized())
            .collect();
        object_pools.push(pool.map_err(DatasetError::Sizing)?);
    }

    let mut subjects = Vec::with_capacity(config.n_subjects);
    for _ in 0..config.n_subjects {
        let extra_words = {
            let roll: f64 = rng.random();
            if roll < 0.5 {
                0
            } else if roll < 0.8 {
                1
            } else {
                2
            }
        };
        let mut s = names.capitalized().map_err(DatasetError::Sizing)?;
        for _ in 0..extra_words {
            s.push(' ');
            s.push_str(&names.lowercase().map_err(DatasetError::Sizing)?);
        }
        subjects.push(s);
    }

    let mut triples = Vec::with_capacity(config.n_subjects * config.n_relations);
    let mut aliases = AliasMap::default();
    for subject_id in 0..config.n_subjects {
        for relation_id in 0..config.n_relations {
            let pool = &object_pools[relation_id];
            let object = pool[rng.random_range(0..pool.len())].clone();
            aliases.insert(subject_id, relation_id, object.clone());
            triples.push(KnowledgeTriple {
                id: triples.len(),
                subject_id,
                relation_id,
                object,
            });
        }
    }

    // extra acceptable objects for a fraction of triples
    let n_aliased = (config.alias_fraction * triples.len() as f64).floor() as usize;
    let mut triple_order: Vec<usize> = (0..triples.len()).collect();
    triple_order.shuffle(&mut rng);
    for &tid in triple_order.iter().take(n_aliased) {
        let t = &triples[tid];
        let pool = &object_pools[t.relation_id];
        if pool.len() < 2 {
            continue;
        }
        let extra = loop {
            let cand = &pool[rng.random_range(0..pool.len())];
            if cand != &t.object {
                break cand.clone();
            }
        };
        aliases.insert(t.subject_id, t.relation_id, extra);
    }

    // confounded subjects: heavily co-occurring wrong object, drawn from the
    // object pool of some relation where it contradicts the subject's fact
    let n_confounded = (config.confounder_rate * config.n_subjects as f64).floor() as usize;
    let mut subject_order: Vec<usize> = (0..config.n_subjects).collect();
    subject_order.shuffle(&mut rng);
    let mut confounders = BTreeMap::new();
    for &sid in subject_order.iter().take(n_confounded) {
        let relation_id = rng.random_range(0..config.n_relations);
        let own = &triples[sid * config.n_relations + relation_id].object;
        let pool = &object_pools[relation_id];
        if pool.len() < 2 {
            continue;
        }
        let distractor = loop {
            let cand = &pool[rng.random_range(0..pool.len())];
            if cand != own {
                break cand.clone();
            }
        };
        confounders.insert(sid, distractor);
    }

    // vocabulary assembly; pad with filler names toward the target size
    let mut words: BTreeSet<String> = BASE_WORDS.iter().map(|w| w.to_string()).collect();
    for s in &subjects {
        for w in s.split_whitespace() {
            words.insert(w.to_string());
        }
    }
    for pool in &object_pools {
        for o in pool {
            words.insert(o.clone());
        }
    }
    for r in &relations {
        for w in r.phrase.split_whitespace() {
            words.insert(w.to_string());
        }
    }
    let mut filler_capitalized = Vec::new();
    let mut filler_lowercase = Vec::new();
    while words.len() < config.vocab_target {
        if words.len() % 2 == 0 {
            let n = names.capitalized().map_err(DatasetError::Sizing)?;
            words.insert(n.clone());
            filler_capitalized.push(n);
        } else {
            let n = names.lowercase().map_err(DatasetError::Sizing)?;
            words.insert(n.clone());
            filler_lowercase.push(n);
        }
    }
    filler_capitalized.sort();
    filler_lowercase.sort();
    if filler_capitalized.len() < 2 {
        return Err(DatasetError::Sizing(format!(
            "vocab_target {} leaves no room for filler names; raise it above {}",
            config.vocab_target,
            words.len()
        )));
    }

    let vocab = Vocabulary::from_tokens(words.into_iter().collect())?;

    Ok(World {
        config: config.clone(),
        vocab,
        subjects,
        relations,
        triples,
        aliases,
        confounders,
        filler_capitalized,
        filler_lowercase,
    })
}

impl World {
    /// Line-oriented, tab-separated text format; `load(save(w)) == w`.
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut s = String::new();
        s.push_str("#world v1\n");
        s.push_str("[config]\n");
        s.push_str(&format!("n_subjects\t{}\n", self.config.n_subjects));
        s.push_str(&format!("n_relations\t{}\n", self.config.n_relations));
        s.push_str(&format!(
            "n_objects_per_relation\t{}\n",
            self.config.n_objects_per_relation
        ));
        s.push_str(&format!(
            "templates_per_relation\t{}\n",
            self.config.templates_per_relation
        ));
        s.push_str(&format!(
            "subject_zipf_exponent\t{}\n",
            self.config.subject_zipf_exponent
        ));
        s.push_str(&format!("confounder_rate\t{}\n", self.config.confounder_rate));
        s.push_str(&format!("alias_fraction\t{}\n", self.config.alias_fraction));
        s.push_str(&format!("vocab_target\t{}\n", self.config.vocab_target));
        s.push_str(&format!("seed\t{}\n", self.config.seed));
        s.push_str("[vocab]\n");
        for (id, tok) in self.vocab.iter() {
            let _ = writeln!(s, "{id}\t{tok}");
        }
        s.push_str("[subject]\n");
        for (id, subj) in self.subjects.iter().enumerate() {
            let _ = writeln!(s, "{id}\t{subj}");
        }
        s.push_str("[relation]\n");
        for r in &self.relations {
            let _ = writeln!(s, "{}\t{}", r.id, r.phrase);
        }
        s.push_str("[template]\n");
        for r in &self.relations {
            for (i, t) in r.templates.iter().enumerate() {
                let _ = writeln!(s, "{}\t{}\t{}", r.id, i, t);
            }
        }
        s.push_str("[triple]\n");
        for t in &self.triples {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", t.id, t.subject_id, t.relation_id, t.object);
        }
        s.push_str("[alias]\n");
        for ((sid, rid), objs) in self.aliases.iter() {
            let list: Vec<&str> = objs.iter().map(String::as_str).collect();
            let _ = writeln!(s, "{sid}\t{rid}\t{}", list.join(","));
        }
        s.push_str("[confounder]\n");
        for (sid, obj) in &self.confounders {
            let _ = writeln!(s, "{sid}\t{obj}");
        }
        s.push_str("[filler]\n");
        for n in &self.filler_capitalized {
            let _ = writeln!(s, "cap\t{n}");
        }
        for n in &self.filler_lowercase {
            let _ = writeln!(s, "low\t{n}");
        }
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<World, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        let bad = |line: usize, reason: &str| DatasetError::WorldFormat {
            line: line + 1,
            reason: reason.to_string(),
        };
        let mut section = String::new();
        let mut config_kv: BTreeMap<String, String> = BTreeMap::new();
        let mut vocab_tokens: Vec<String> = Vec::new();
        let mut subjects = Vec::new();
        let mut relations: Vec<RelationSpec> = Vec::new();
        let mut triples = Vec::new();
        let mut aliases = AliasMap::default();
        let mut confounders = BTreeMap::new();
        let mut filler_capitalized = Vec::new();
        let mut filler_lowercase = Vec::new();

        for (ln, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                section = line.to_string();
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match section.as_str() {
                "[config]" => {
                    if fields.len() != 2 {
                        return Err(bad(ln, "config lines are key\\tvalue"));
                    }
                    config_kv.insert(fields[0].to_string(), fields[1].to_string());
                }
                "[vocab]" => {
                    if fields.len() != 2 {
                        return Err(bad(ln, "vocab lines are id\\ttoken"));
                    }
                    let id: usize = fields[0].parse().map_err(|_| bad(ln, "bad vocab id"))?;
                    if id != vocab_tokens.len() {
                        return Err(bad(ln, "vocab ids must be dense and ascending"));
                    }
                    vocab_tokens.push(fields[1].to_string());
                }
                "[subject]" => {
                    if fields.len() != 2 {
                        return Err(bad(ln, "subject lines are id\\ttext"));
                    }
                    subjects.push(fields[1].to_string());
                }
                "[relation]" => {
                    if fields.len() != 2 {
                        return Err(bad(ln, "relation lines are id\\tphrase"));
                    }
                    relations.push(RelationSpec {
                        id: fields[0].parse().map_err(|_| bad(ln, "bad relation id"))?,
                        phrase: fields[1].to_string(),
                        templates: Vec::new(),
                    });
                }
                "[template]" => {
                    if fields.len() != 3 {
                        return Err(bad(ln, "template lines are rel\\tidx\\ttext"));
                    }
                    let rid: usize = fields[0].parse().map_err(|_| bad(ln, "bad relation id"))?;
                    relations
                        .get_mut(rid)
                        .ok_or_else(|| bad(ln, "template for unknown relation"))?
                        .templates
                        .push(fields[2].to_string());
                }
                "[triple]" => {
                    if fields.len() != 4 {
                        return Err(bad(ln, "triple lines are id\\tsubject\\trelation\\tobject"));
                    }
                    triples.push(KnowledgeTriple {
                        id: fields[0].parse().map_err(|_| bad(ln, "bad triple id"))?,
                        subject_id: fields[1].parse().map_err(|_| bad(ln, "bad subject id"))?,
                        relation_id: fields[2].parse().map_err(|_| bad(ln, "bad relation id"))?,
                        object: fields[3].to_string(),
                    });
                }
                "[alias]" => {
                    if fields.len() != 3 {
                        return Err(bad(ln, "alias lines are subject\\trelation\\tobjects"));
                    }
                    let sid: usize = fields[0].parse().map_err(|_| bad(ln, "bad subject id"))?;
                    let rid: usize = fields[1].parse().map_err(|_| bad(ln, "bad relation id"))?;
                    for obj in fields[2].split(',') {
                        aliases.insert(sid, rid, obj.to_string());
                    }
                }
                "[confounder]" => {
                    if fields.len() != 2 {
                        return Err(bad(ln, "confounder lines are subject\\tobject"));
                    }
                    confounders.insert(
                        fields[0].parse().map_err(|_| bad(ln, "bad subject id"))?,
                        fields[1].to_string(),
                    );
                }
                "[filler]" => {
                    if fields.len() != 2 {
                        return Err(bad(ln, "filler lines are kind\\tname"));
                    }
                    match fields[0] {
                        "cap" => filler_capitalized.push(fields[1].to_string()),
                        "low" => filler_lowercase.push(fields[1].to_string()),
                        _ => return Err(bad(ln, "filler kind must be cap or low")),
                    }
                }
                _ => return Err(bad(ln, "line outside any known section")),
            }
        }

        let parse = |key: &str| -> Result<String, DatasetError> {
            config_kv
                .get(key)
                .cloned()
                .ok_or_else(|| DatasetError::WorldFormat {
                    line: 0,
                    reason: format!("missing config key {key}"),
                })
        };
        let config = WorldConfig {
            n_subjects: parse("n_subjects")?.parse().map_err(|_| bad(0, "n_subjects"))?,
            n_relations: parse("n_relations")?.parse().map_err(|_| bad(0, "n_relations"))?,
            n_objects_per_relation: parse("n_objects_per_relation")?
                .parse()
                .map_err(|_| bad(0, "n_objects_per_relation"))?,
            templates_per_relation: parse("templates_per_relation")?
                .parse()
                .map_err(|_| bad(0, "templates_per_relation"))?,
            subject_zipf_exponent: parse("subject_zipf_exponent")?
                .parse()
                .map_err(|_| bad(0, "subject_zipf_exponent"))?,
            confounder_rate: parse("confounder_rate")?
                .parse()
                .map_err(|_| bad(0, "confounder_rate"))?,
            alias_fraction: parse("alias_fraction")?
                .parse()
                .map_err(|_| bad(0, "alias_fraction"))?,
            vocab_target: parse("vocab_target")?.parse().map_err(|_| bad(0, "vocab_target"))?,
            seed: parse("seed")?.parse().map_err(|_| bad(0, "seed"))?,
        };

        Ok(World {
            config,
            vocab: Vocabulary::from_tokens(vocab_tokens)?,
            subjects,
            relations,
            triples,
            aliases,
            confounders,
            filler_capitalized,
            filler_lowercase,
        })
    }
}

#[cfg(test)]
pub(crate) fn small_world_config(seed: u64) -> WorldConfig {
    WorldConfig {
        n_subjects: 12,
        n_relations: 3,
        n_objects_per_relation: 5,
        templates_per_relation: 3,
        subject_zipf_exponent: 1.1,
        confounder_rate: 0.25,
        alias_fraction: 0.3,
        vocab_target: 160,
        seed,
    }
}
