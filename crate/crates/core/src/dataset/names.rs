//! Deterministic pseudo-name generator for the synthetic world.

use std::collections::HashSet;

use rand::Rng as _;

use crate::rng::Rng;

const ONSETS: [&str; 24] = [
    "b", "br", "d", "dr", "f", "g", "gl", "k", "kr", "l", "m", "n", "p", "pr", "r", "s", "st",
    "t", "tr", "v", "z", "sk", "pl", "ch",
];
const NUCLEI: [&str; 10] = ["a", "e", "i", "o", "u", "ai", "ei", "ou", "ia", "or"];
const CODAS: [&str; 8] = ["", "", "", "n", "r", "s", "l", "m"];

/// Draws unique syllable names; capitalized and lowercase pools share the
/// collision set so a name never appears in both cases.
pub struct NameGen {
    rng: Rng,
    used: HashSet<String>,
}

impl NameGen {
    pub fn new(rng: Rng, reserved: impl IntoIterator<Item = String>) -> Self {
        Self {
            rng,
            used: reserved.into_iter().collect(),
        }
    }

    fn syllable(&mut self) -> String {
        let o = ONSETS[self.rng.random_range(0..ONSETS.len())];
        let n = NUCLEI[self.rng.random_range(0..NUCLEI.len())];
        let c = CODAS[self.rng.random_range(0..CODAS.len())];
        format!("{o}{n}{c}")
    }

    fn raw_name(&mut self) -> String {
        let syllables = self.rng.random_range(2..=3);
        let mut s = String::new();
        for _ in 0..syllables {
            s.push_str(&self.syllable());
        }
        s
    }

    /// Unique lowercase word; errors when the pool is effectively exhausted.
    pub fn lowercase(&mut self) -> Result<String, String> {
        for _ in 0..1000 {
            let name = self.raw_name();
            if self.used.insert(name.clone()) {
                return Ok(name);
            }
        }
        Err("name pool exhausted (lowercase)".to_string())
    }

    /// Unique capitalized word.
    pub fn capitalized(&mut self) -> Result<String, String> {
        for _ in 0..1000 {
            let mut name = self.raw_name();
            name[..1].make_ascii_uppercase();
            if self.used.insert(name.clone()) {
                return Ok(name);
            }
        }
        Err("name pool exhausted (capitalized)".to_string())
    }
}
