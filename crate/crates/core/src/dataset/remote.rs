//! Optional remote alias resolver.
//!
//! Fetches extra acceptable objects for a (subject, relation) pair from a
//! configured endpoint, merges them into the alias map, and caches results on
//! disk. Every failure falls back to the offline map with a warning; the
//! resolver is never fatal.
//!
//! Endpoint contract: a URL template with `{subject}` and `{relation}`
//! placeholders; the response body is plain UTF-8 text with one single-word
//! object per line. Anything else counts as malformed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use super::world::AliasMap;
use super::DatasetError;

/// Transport abstraction so the resolver can be exercised without a network.
pub trait AliasFetcher: Send + Sync {
    fn fetch(&self, url: &str) -> Result<String, String>;
}

/// Production fetcher: blocking HTTP GET with a global timeout.
pub struct HttpFetcher {
    agent: ureq::Agent,
}

impl HttpFetcher {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build();
        Self {
            agent: config.into(),
        }
    }
}

impl AliasFetcher for HttpFetcher {
    fn fetch(&self, url: &str) -> Result<String, String> {
        let mut response = self.agent.get(url).call().map_err(|e| e.to_string())?;
        response
            .body_mut()
            .read_to_string()
            .map_err(|e| e.to_string())
    }
}

fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => {
                out.push(b as char)
            }
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

/// Outcome of one lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolveOutcome {
    pub objects: Vec<String>,
    pub from_cache: bool,
    pub warning: Option<String>,
}

/// Disk-cached resolver over any [`AliasFetcher`].
pub struct RemoteResolver<'a> {
    url_template: String,
    cache_path: PathBuf,
    cache: BTreeMap<(String, String), Vec<String>>,
    fetcher: &'a dyn AliasFetcher,
}

impl<'a> RemoteResolver<'a> {
    pub fn new(
        url_template: &str,
        cache_path: &Path,
        fetcher: &'a dyn AliasFetcher,
    ) -> Result<Self, DatasetError> {
        let mut cache = BTreeMap::new();
        if cache_path.exists() {
            for (ln, line) in std::fs::read_to_string(cache_path)?.lines().enumerate() {
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != 3 {
                    return Err(DatasetError::WorldFormat {
                        line: ln + 1,
                        reason: "alias cache lines are subject\\trelation\\tobjects".into(),
                    });
                }
                let objects: Vec<String> = fields[2]
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.to_string())
                    .collect();
                cache.insert((fields[0].to_string(), fields[1].to_string()), objects);
            }
        }
        Ok(Self {
            url_template: url_template.to_string(),
            cache_path: cache_path.to_path_buf(),
            cache,
            fetcher,
        })
    }

    fn persist(&self) -> Result<(), DatasetError> {
        let mut s = String::new();
        for ((subject, relation), objects) in &self.cache {
            s.push_str(&format!("{subject}\t{relation}\t{}\n", objects.join(",")));
        }
        std::fs::write(&self.cache_path, s)?;
        Ok(())
    }

    fn parse_body(body: &str) -> Result<Vec<String>, String> {
        let mut objects = Vec::new();
        for line in body.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line.split_whitespace().count() != 1 {
                return Err(format!("line {line:?} is not a single word"));
            }
            objects.push(line.to_string());
        }
        if objects.is_empty() {
            return Err("response held no objects".to_string());
        }
        Ok(objects)
    }

    /// Look up objects for the pair; cache hits never touch the network, and
    /// any failure returns an empty object list plus a warning.
    pub fn resolve(&mut self, subject: &str, relation: &str) -> ResolveOutcome {
        let key = (subject.to_string(), relation.to_string());
        if let Some(objects) = self.cache.get(&key) {
            return ResolveOutcome {
                objects: objects.clone(),
                from_cache: true,
                warning: None,
            };
        }
        let url = self
            .url_template
            .replace("{subject}", &percent_encode(subject))
            .replace("{relation}", &percent_encode(relation));
        let fetched = self.fetcher.fetch(&url).and_then(|b| Self::parse_body(&b));
        match fetched {
            Ok(objects) => {
                self.cache.insert(key, objects.clone());
                let warning = self
                    .persist()
                    .err()
                    .map(|e| format!("alias cache not persisted: {e}"));
                ResolveOutcome {
                    objects,
                    from_cache: false,
                    warning,
                }
            }
            Err(e) => ResolveOutcome {
                objects: Vec::new(),
                from_cache: false,
                warning: Some(format!(
                    "remote alias lookup failed for ({subject}, {relation}): {e}; using offline map"
                )),
            },
        }
    }
}

/// Merge resolved objects into the alias map (monotone: never removes).
/// Objects outside the closed vocabulary are skipped with a warning.
pub fn merge_remote_objects(
    aliases: &mut AliasMap,
    vocab: &crate::model::Vocabulary,
    subject_id: usize,
    relation_id: usize,
    objects: &[String],
) -> Vec<String> {
    let mut warnings = Vec::new();
    for obj in objects {
        if vocab.contains(obj) {
            aliases.insert(subject_id, relation_id, obj.clone());
        } else {
            warnings.push(format!(
                "remote object {obj:?} is outside the closed vocabulary; skipped"
            ));
        }
    }
    warnings
}
