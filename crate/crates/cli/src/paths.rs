//! Run-directory layout. Every stage reads its inputs from and writes its
//! outputs into one run directory, so the pipeline chains without plumbing.

use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct RunPaths {
    pub out: PathBuf,
    pub world: PathBuf,
    pub model: PathBuf,
}

impl RunPaths {
    pub fn new(out: PathBuf, world: Option<PathBuf>, model: Option<PathBuf>) -> Self {
        let world = world.unwrap_or_else(|| out.join("world.tsv"));
        let model = model.unwrap_or_else(|| out.join("model.htw"));
        Self { out, world, model }
    }

    pub fn corpus(&self) -> PathBuf {
        self.out.join("corpus.txt")
    }

    pub fn corpus_manifest(&self) -> PathBuf {
        self.out.join("corpus-manifest.tsv")
    }

    pub fn ckpt_dir(&self) -> PathBuf {
        self.out.join("ckpts")
    }

    pub fn train_log(&self) -> PathBuf {
        self.out.join("train-log.tsv")
    }

    pub fn alias_cache(&self) -> PathBuf {
        self.out.join("alias-cache.tsv")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out.join("eval")
    }

    pub fn outcomes(&self) -> PathBuf {
        self.eval_dir().join("outcomes.tsv")
    }

    pub fn hallucinations(&self) -> PathBuf {
        self.eval_dir().join("hallucinations.tsv")
    }

    pub fn eval_summary(&self) -> PathBuf {
        self.eval_dir().join("summary.csv")
    }

    pub fn trace_dir(&self) -> PathBuf {
        self.out.join("trace")
    }

    pub fn per_query_ie(&self) -> PathBuf {
        self.trace_dir().join("per-query-ie.tsv")
    }

    pub fn noise_summary(&self) -> PathBuf {
        self.trace_dir().join("noise-summary.tsv")
    }

    pub fn aie_csv(&self, kind: &str) -> PathBuf {
        self.trace_dir().join(format!("aie-{kind}.csv"))
    }

    pub fn aie_counts(&self) -> PathBuf {
        self.trace_dir().join("aie-counts.json")
    }

    pub fn classify_dir(&self) -> PathBuf {
        self.out.join("classify")
    }

    pub fn labels(&self) -> PathBuf {
        self.classify_dir().join("labels.csv")
    }

    pub fn lens_dir(&self) -> PathBuf {
        self.out.join("lens")
    }

    pub fn esp_per_query(&self) -> PathBuf {
        self.lens_dir().join("esp-per-query.tsv")
    }

    pub fn esp_profile(&self) -> PathBuf {
        self.lens_dir().join("esp-profile.csv")
    }

    pub fn lens_profile(&self) -> PathBuf {
        self.lens_dir().join("lens-profile.csv")
    }

    pub fn ranks(&self) -> PathBuf {
        self.lens_dir().join("ranks.csv")
    }

    pub fn manifest_dir(&self) -> PathBuf {
        self.out.join("manifest")
    }

    pub fn features(&self) -> PathBuf {
        self.manifest_dir().join("features.tsv")
    }

    pub fn manifestation(&self) -> PathBuf {
        self.manifest_dir().join("manifestation.csv")
    }

    pub fn mitigate_dir(&self) -> PathBuf {
        self.out.join("mitigate")
    }

    pub fn mitigated_model(&self, method: &str) -> PathBuf {
        self.mitigate_dir().join(format!("{method}-model.htw"))
    }

    pub fn mitigate_log(&self, method: &str) -> PathBuf {
        self.mitigate_dir().join(format!("{method}-train-log.tsv"))
    }

    pub fn train_examples(&self) -> PathBuf {
        self.mitigate_dir().join("train-examples.tsv")
    }

    pub fn mitigation_report(&self) -> PathBuf {
        self.mitigate_dir().join("report.csv")
    }

    pub fn trajectory_dir(&self) -> PathBuf {
        self.out.join("trajectory")
    }

    pub fn trajectory(&self) -> PathBuf {
        self.trajectory_dir().join("trajectory.csv")
    }

    pub fn bundle_dir(&self) -> PathBuf {
        self.out.join("bundle")
    }

    pub fn config_echo(&self, stage: &str) -> PathBuf {
        self.out.join(format!("{stage}.config-echo.toml"))
    }
}

pub fn ensure_dir(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)
}
