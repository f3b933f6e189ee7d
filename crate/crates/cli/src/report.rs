//! Report file formats.
//!
//! Every report starts with a `# config_hash=<hex>` comment line. Values are
//! written with Rust's shortest round-trip float formatting, so parsing a
//! report recovers the exact numbers (and regenerating it from parsed data
//! reproduces the file byte for byte).
//!
//! TSV is used for per-query intermediates, CSV for derived matrices and
//! tables, JSON for the cell-count sidecar.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

use hallucitrace_core::causal::{AieGrid, IeGrid, Mechanism, PositionGroup};
use hallucitrace_core::dataset::QueryLabel;
use hallucitrace_core::intervene::SiteKind;
use hallucitrace_core::lens::{GroupTag, LensKind, TrajectoryPoint};
use hallucitrace_core::manifestation::ManifestationFeatures;
use hallucitrace_core::mitigate::MitigationStep;

pub fn stamp(hash: &str) -> String {
    format!("# config_hash={hash}\n")
}

pub fn write_stamped(path: &Path, hash: &str, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, format!("{}{body}", stamp(hash)))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Returns (config hash, body without comment lines).
pub fn read_stamped(path: &Path) -> Result<(String, String)> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut hash = String::new();
    let mut body = String::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# config_hash=") {
            hash = rest.to_string();
        } else if !line.starts_with('#') {
            body.push_str(line);
            body.push('\n');
        }
    }
    if hash.is_empty() {
        bail!("{} carries no config hash", path.display());
    }
    Ok((hash, body))
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .with_context(|| format!("bad {what}: {s:?}"))
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.parse::<usize>()
        .with_context(|| format!("bad {what}: {s:?}"))
}

// ---------------------------------------------------------------------------
// eval stage
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeRow {
    pub query_id: String,
    pub label: QueryLabel,
    pub predicted: Option<String>,
    pub y: Option<f64>,
}

pub fn write_outcomes(path: &Path, hash: &str, rows: &[OutcomeRow]) -> Result<()> {
    let mut body = String::from("query_id\tlabel\tpredicted\ty\n");
    for r in rows {
        body.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.query_id,
            r.label.label(),
            r.predicted.as_deref().unwrap_or("-"),
            r.y.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
        ));
    }
    write_stamped(path, hash, &body)
}

pub fn read_outcomes(path: &Path) -> Result<Vec<OutcomeRow>> {
    let (_, body) = read_stamped(path)?;
    let mut out = Vec::new();
    for line in body.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            bail!("bad outcome row: {line:?}");
        }
        out.push(OutcomeRow {
            query_id: f[0].to_string(),
            label: QueryLabel::parse(f[1]).context("bad label")?,
            predicted: (f[2] != "-").then(|| f[2].to_string()),
            y: if f[3] == "-" {
                None
            } else {
                Some(parse_f64(f[3], "y")?)
            },
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HallucinationRow {
    pub query_id: String,
    pub triple_id: usize,
    pub template_idx: usize,
    pub text: String,
    pub subject_first: usize,
    pub subject_last: usize,
    pub relation_end: usize,
    pub true_object: String,
    pub predicted_object: String,
}

pub fn write_hallucinations(path: &Path, hash: &str, rows: &[HallucinationRow]) -> Result<()> {
    let mut body = String::from(
        "query_id\ttriple_id\ttemplate_idx\ttext\tsubject_first\tsubject_last\trelation_end\ttrue_object\tpredicted_object\n",
    );
    for r in rows {
        body.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.query_id,
            r.triple_id,
            r.template_idx,
            r.text,
            r.subject_first,
            r.subject_last,
            r.relation_end,
            r.true_object,
            r.predicted_object,
        ));
    }
    write_stamped(path, hash, &body)
}

pub fn read_hallucinations(path: &Path) -> Result<Vec<HallucinationRow>> {
    let (_, body) = read_stamped(path)?;
    let mut out = Vec::new();
    for line in body.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 9 {
            bail!("bad hallucination row: {line:?}");
        }
        out.push(HallucinationRow {
            query_id: f[0].to_string(),
            triple_id: parse_usize(f[1], "triple_id")?,
            template_idx: parse_usize(f[2], "template_idx")?,
            text: f[3].to_string(),
            subject_first: parse_usize(f[4], "subject_first")?,
            subject_last: parse_usize(f[5], "subject_last")?,
            relation_end: parse_usize(f[6], "relation_end")?,
            true_object: f[7].to_string(),
            predicted_object: f[8].to_string(),
        });
    }
    Ok(out)
}

/// metric,value table (used for eval summaries).
pub fn write_metrics_csv(path: &Path, hash: &str, rows: &[(String, String)]) -> Result<()> {
    let mut body = String::from("metric,value\n");
    for (k, v) in rows {
        body.push_str(&format!("{k},{v}\n"));
    }
    write_stamped(path, hash, &body)
}

pub fn read_metrics_csv(path: &Path) -> Result<BTreeMap<String, String>> {
    let (_, body) = read_stamped(path)?;
    let mut out = BTreeMap::new();
    for line in body.lines().skip(1) {
        let (k, v) = line.split_once(',').context("bad metric row")?;
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// trace stage
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct IeRow {
    pub query_id: String,
    pub kind: SiteKind,
    pub layer: usize,
    pub position: usize,
    pub ie: f64,
}

pub fn write_per_query_ie(path: &Path, hash: &str, rows: &[IeRow]) -> Result<()> {
    let mut body = String::from("query_id\tkind\tlayer\tposition\tie\n");
    for r in rows {
        body.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.query_id,
            r.kind.label(),
            r.layer,
            r.position,
            r.ie
        ));
    }
    write_stamped(path, hash, &body)
}

pub fn read_per_query_ie(path: &Path) -> Result<Vec<IeRow>> {
    let (_, body) = read_stamped(path)?;
    let mut out = Vec::new();
    for line in body.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            bail!("bad ie row: {line:?}");
        }
        out.push(IeRow {
            query_id: f[0].to_string(),
            kind: SiteKind::parse(f[1]).context("bad site kind")?,
            layer: parse_usize(f[2], "layer")?,
            position: parse_usize(f[3], "position")?,
            ie: parse_f64(f[4], "ie")?,
        });
    }
    Ok(out)
}

/// Rebuild per-query grids from flat rows (layers/positions must be dense).
pub fn grids_from_ie_rows(rows: &[IeRow]) -> Result<BTreeMap<String, IeGrid>> {
    let mut dims: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in rows {
        let e = dims.entry(r.query_id.clone()).or_insert((0, 0));
        e.0 = e.0.max(r.layer);
        e.1 = e.1.max(r.position + 1);
    }
    let mut out = BTreeMap::new();
    for (qid, (layers, seq)) in &dims {
        out.insert(qid.clone(), IeGrid::zeros(*layers, *seq));
    }
    for r in rows {
        out.get_mut(&r.query_id)
            .expect("grid allocated")
            .set(r.kind, r.layer, r.position, r.ie);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSummaryRow {
    pub query_id: String,
    pub y: f64,
    pub attempts: usize,
    pub n_accepted: usize,
    pub acceptance_rate: f64,
    pub under_sampled: bool,
    /// accepted (seed, y_star) pairs
    pub samples: Vec<(u64, f64)>,
}

pub fn write_noise_summary(path: &Path, hash: &str, rows: &[NoiseSummaryRow]) -> Result<()> {
    let mut body =
        String::from("query_id\ty\tattempts\tn_accepted\tacceptance_rate\tunder_sampled\tsamples\n");
    for r in rows {
        let samples: Vec<String> = r
            .samples
            .iter()
            .map(|(s, ys)| format!("{s}:{ys}"))
            .collect();
        body.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.query_id,
            r.y,
            r.attempts,
            r.n_accepted,
            r.acceptance_rate,
            r.under_sampled,
            if samples.is_empty() {
                "-".to_string()
            } else {
                samples.join(",")
            },
        ));
    }
    write_stamped(path, hash, &body)
}

pub fn read_noise_summary(path: &Path) -> Result<Vec<NoiseSummaryRow>> {
    let (_, body) = read_stamped(path)?;
    let mut out = Vec::new();
    for line in body.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            bail!("bad noise summary row: {line:?}");
        }
        let samples = if f[6] == "-" {
            Vec::new()
        } else {
            f[6].split(',')
                .map(|pair| -> Result<(u64, f64)> {
                    let (s, ys) = pair.split_once(':').context("bad sample pair")?;
                    Ok((s.parse::<u64>()?, parse_f64(ys, "y_star")?))
                })
                .collect::<Result<_>>()?
        };
        out.push(NoiseSummaryRow {
            query_id: f[0].to_string(),
            y: parse_f64(f[1], "y")?,
            attempts: parse_usize(f[2], "attempts")?,
            n_accepted: parse_usize(f[3], "n_accepted")?,
            acceptance_rate: parse_f64(f[4], "acceptance_rate")?,
            under_sampled: f[5] == "true",
            samples,
        });
    }
    Ok(out)
}

/// One CSV per component kind: rows = position groups, columns = layers.
pub fn write_aie_csv(path: &Path, hash: &str, grid: &AieGrid, kind: SiteKind) -> Result<()> {
    let mut body = String::from("group");
    for layer in 1..=grid.n_layers {
        body.push_str(&format!(",layer{layer}"));
    }
    body.push('\n');
    for group in PositionGroup::ALL {
        body.push_str(group.label());
        for layer in 1..=grid.n_layers {
            match grid.cells.get(&(kind, layer, group)) {
                Some(cell) => body.push_str(&format!(",{}", cell.mean)),
                None => body.push_str(",-"),
            }
        }
        body.push('\n');
    }
    write_stamped(path, hash, &body)
}

/// Parse an AIE matrix back into (group, layer) -> mean.
pub fn read_aie_csv(path: &Path) -> Result<BTreeMap<(PositionGroup, usize), f64>> {
    let (_, body) = read_stamped(path)?;
    let mut lines = body.lines();
    let header = lines.next().context("empty aie csv")?;
    let n_layers = header.split(',').count() - 1;
    let mut out = BTreeMap::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_layers + 1 {
            bail!("bad aie row: {line:?}");
        }
        let group = PositionGroup::parse(fields[0]).context("bad position group")?;
        for (i, v) in fields[1..].iter().enumerate() {
            if *v != "-" {
                out.insert((group, i + 1), parse_f64(v, "aie cell")?);
            }
        }
    }
    Ok(out)
}

/// Cell counts sidecar (kind -> group -> layer -> count).
pub fn write_aie_counts(path: &Path, hash: &str, grid: &AieGrid) -> Result<()> {
    let mut kinds: BTreeMap<String, BTreeMap<String, BTreeMap<String, usize>>> = BTreeMap::new();
    for ((kind, layer, group), cell) in &grid.cells {
        kinds
            .entry(kind.label().to_string())
            .or_default()
            .entry(group.label().to_string())
            .or_default()
            .insert(format!("layer{layer}"), cell.count);
    }
    let doc = serde_json::json!({
        "config_hash": hash,
        "counts": kinds,
    });
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// classify stage
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub query_id: String,
    pub delta_ie: f64,
    pub label: Mechanism,
}

pub fn write_labels(path: &Path, hash: &str, rows: &[LabelRow]) -> Result<()> {
    let mut body = String::from("query_id,delta_ie,label\n");
    for r in rows {
        body.push_str(&format!("{},{},{}\n", r.query_id, r.delta_ie, r.label.label()));
    }
    write_stamped(path, hash, &body)
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let (_, body) = read_stamped(path)?;
    let mut out = Vec::new();
    for line in body.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            bail!("bad label row: {line:?}");
        }
        out.push(LabelRow {
            query_id: f[0].to_string(),
            delta_ie: parse_f64(f[1], "delta_ie")?,
            label: Mechanism::parse(f[2]).context("bad mechanism")?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// lens stage
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct EspRow {
    pub query_id: String,
    pub group: GroupTag,
    pub layer: usize,
    pub esp_mlp: f64,
    pub esp_attn: f64,
    pub i_m: f64,
    pub i_a: f64,
}

pub fn write_esp_per_query(path: &Path, hash: &str, rows: &[EspRow]) -> Result<()> {
    let mut body = String::from("query_id\tgroup\tlayer\tesp_mlp\tesp_attn\ti_m\ti_a\n");
    for r in rows {
        body.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.query_id,
            r.group.label(),
            r.layer,
            r.esp_mlp,
            r.esp_attn,
            r.i_m,
            r.i_a
        ));
    }
    write_stamped(path, hash, &body)
}

pub fn read_esp_per_query(path: &Path) -> Result<Vec<EspRow>> {
    let (_, body) = read_stamped(path)?;
    let mut out = Vec::new();
    for line in body.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            bail!("bad esp row: {line:?}");
        }
        out.push(EspRow {
            query_id: f[0].to_string(),
            group: GroupTag::parse(f[1]).context("bad group")?,
            layer: parse_usize(f[2], "layer")?,
            esp_mlp: parse_f64(f[3], "esp_mlp")?,
            esp_attn: parse_f64(f[4], "esp_attn")?,
            i_m: parse_f64(f[5], "i_m")?,
            i_a: parse_f64(f[6], "i_a")?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub group: GroupTag,
    /// "mlp_out"/"attn_out" for projections, "i_m"/"i_a" for lens metrics
    pub metric: String,
    pub layer: usize,
    pub mean: f64,
    pub count: usize,
}

pub fn write_profile_csv(path: &Path, hash: &str, rows: &[ProfileRow]) -> Result<()> {
    let mut body = String::from("group,metric,layer,mean,count\n");
    for r in rows {
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            r.group.label(),
            r.metric,
            r.layer,
            r.mean,
            r.count
        ));
    }
    write_stamped(path, hash, &body)
}

pub fn read_profile_csv(path: &Path) -> Result<Vec<ProfileRow>> {
    let (_, body) = read_stamped(path)?;
    let mut out = Vec::new();
    for line in body.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            bail!("bad profile row: {line:?}");
        }
        out.push(ProfileRow {
            group: GroupTag::parse(f[0]).context("bad group")?,
            metric: f[1].to_string(),
            layer: parse_usize(f[2], "layer")?,
            mean: parse_f64(f[3], "mean")?,
            count: parse_usize(f[4], "count")?,
        });
    }
    Ok(out)
}

pub fn lens_kind_label(kind: LensKind) -> &'static str {
    kind.label()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankRow {
    pub query_id: String,
    pub label: QueryLabel,
    pub min_rank: usize,
    pub threshold: usize,
    pub within_threshold: bool,
}

pub fn write_ranks(path: &Path, hash: &str, rows: &[RankRow]) -> Result<()> {
    let mut body = String::from("query_id,label,min_rank,threshold,within_threshold\n");
    for r in rows {
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            r.query_id,
            r.label.label(),
            r.min_rank,
            r.threshold,
            r.within_threshold
        ));
    }
    write_stamped(path, hash, &body)
}

pub fn read_ranks(path: &Path) -> Result<Vec<RankRow>> {
    let (_, body) = read_stamped(path)?;
    let mut out = Vec::new();
    for line in body.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            bail!("bad rank row: {line:?}");
        }
        out.push(RankRow {
            query_id: f[0].to_string(),
            label: QueryLabel::parse(f[1]).context("bad label")?,
            min_rank: parse_usize(f[2], "min_rank")?,
            threshold: parse_usize(f[3], "threshold")?,
            within_threshold: f[4] == "true",
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// manifestation stage
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub query_id: String,
    pub mechanism: Mechanism,
    pub features: ManifestationFeatures,
}

pub fn write_features(path: &Path, hash: &str, rows: &[FeatureRow]) -> Result<()> {
    let mut body =
        String::from("query_id\tmechanism\tso_assoc\tso_prime_assoc\trobustness\tuncertainty\n");
    for r in rows {
        body.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.query_id,
            r.mechanism.label(),
            r.features.so_assoc,
            r.features.so_prime_assoc,
            r.features.robustness,
            r.features.uncertainty
        ));
    }
    write_stamped(path, hash, &body)
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureRow>> {
    let (_, body) = read_stamped(path)?;
    let mut out = Vec::new();
    for line in body.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            bail!("bad feature row: {line:?}");
        }
        out.push(FeatureRow {
            query_id: f[0].to_string(),
            mechanism: Mechanism::parse(f[1]).context("bad mechanism")?,
            features: ManifestationFeatures {
                so_assoc: parse_f64(f[2], "so_assoc")?,
                so_prime_assoc: parse_f64(f[3], "so_prime_assoc")?,
                robustness: parse_f64(f[4], "robustness")?,
                uncertainty: parse_f64(f[5], "uncertainty")?,
            },
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestationRow {
    /// "desk" for this run's values, "reference" for the full-scale anchors
    pub source: String,
    pub group: Mechanism,
    pub count: usize,
    pub features: ManifestationFeatures,
}

pub fn write_manifestation_csv(path: &Path, hash: &str, rows: &[ManifestationRow]) -> Result<()> {
    let mut body =
        String::from("source,group,count,so_assoc,so_prime_assoc,robustness,uncertainty\n");
    for r in rows {
        body.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.source,
            r.group.label(),
            r.count,
            r.features.so_assoc,
            r.features.so_prime_assoc,
            r.features.robustness,
            r.features.uncertainty
        ));
    }
    write_stamped(path, hash, &body)
}

pub fn read_manifestation_csv(path: &Path) -> Result<Vec<ManifestationRow>> {
    let (_, body) = read_stamped(path)?;
    let mut out = Vec::new();
    for line in body.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            bail!("bad manifestation row: {line:?}");
        }
        out.push(ManifestationRow {
            source: f[0].to_string(),
            group: Mechanism::parse(f[1]).context("bad group")?,
            count: parse_usize(f[2], "count")?,
            features: ManifestationFeatures {
                so_assoc: parse_f64(f[3], "so_assoc")?,
                so_prime_assoc: parse_f64(f[4], "so_prime_assoc")?,
                robustness: parse_f64(f[5], "robustness")?,
                uncertainty: parse_f64(f[6], "uncertainty")?,
            },
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// training logs and mitigation reports
// ---------------------------------------------------------------------------

pub fn write_train_log(path: &Path, hash: &str, log: &[(u64, f64)]) -> Result<()> {
    let mut body = String::from("step\tloss\n");
    for (step, loss) in log {
        body.push_str(&format!("{step}\t{loss}\n"));
    }
    write_stamped(path, hash, &body)
}

pub fn write_mitigation_log(path: &Path, hash: &str, log: &[MitigationStep]) -> Result<()> {
    let mut body = String::from("step\tnll\tmhm\tcombined\n");
    for s in log {
        body.push_str(&format!("{}\t{}\t{}\t{}\n", s.step, s.nll, s.mhm, s.combined));
    }
    write_stamped(path, hash, &body)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MitigationReportRow {
    pub method: String,
    pub effectiveness: f64,
    pub specificity: f64,
}

pub fn write_mitigation_report(
    path: &Path,
    hash: &str,
    rows: &[MitigationReportRow],
) -> Result<()> {
    let mut body = String::from("method,effectiveness,specificity\n");
    for r in rows {
        body.push_str(&format!("{},{},{}\n", r.method, r.effectiveness, r.specificity));
    }
    write_stamped(path, hash, &body)
}

pub fn read_mitigation_report(path: &Path) -> Result<Vec<MitigationReportRow>> {
    let (_, body) = read_stamped(path)?;
    let mut out = Vec::new();
    for line in body.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            bail!("bad mitigation report row: {line:?}");
        }
        out.push(MitigationReportRow {
            method: f[0].to_string(),
            effectiveness: parse_f64(f[1], "effectiveness")?,
            specificity: parse_f64(f[2], "specificity")?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainExampleRow {
    pub query_id: String,
    pub text: String,
    pub true_object: String,
    pub predicted_object: String,
}

pub fn write_train_examples(path: &Path, hash: &str, rows: &[TrainExampleRow]) -> Result<()> {
    let mut body = String::from("query_id\ttext\ttrue_object\tpredicted_object\n");
    for r in rows {
        body.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.query_id, r.text, r.true_object, r.predicted_object
        ));
    }
    write_stamped(path, hash, &body)
}

pub fn read_train_examples(path: &Path) -> Result<Vec<TrainExampleRow>> {
    let (_, body) = read_stamped(path)?;
    let mut out = Vec::new();
    for line in body.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            bail!("bad train example row: {line:?}");
        }
        out.push(TrainExampleRow {
            query_id: f[0].to_string(),
            text: f[1].to_string(),
            true_object: f[2].to_string(),
            predicted_object: f[3].to_string(),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// trajectory stage
// ---------------------------------------------------------------------------

pub fn write_trajectory(path: &Path, hash: &str, points: &[TrajectoryPoint]) -> Result<()> {
    let mut body = String::from("step,group,lower_mlp_esp,upper_attn_esp\n");
    for p in points {
        body.push_str(&format!(
            "{},{},{},{}\n",
            p.step,
            p.group.label(),
            p.lower_mlp_esp,
            p.upper_attn_esp
        ));
    }
    write_stamped(path, hash, &body)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryPoint>> {
    let (_, body) = read_stamped(path)?;
    let mut out = Vec::new();
    for line in body.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            bail!("bad trajectory row: {line:?}");
        }
        out.push(TrajectoryPoint {
            step: f[0].parse::<u64>().context("bad step")?,
            group: GroupTag::parse(f[1]).context("bad group")?,
            lower_mlp_esp: parse_f64(f[2], "lower_mlp_esp")?,
            upper_attn_esp: parse_f64(f[3], "upper_attn_esp")?,
        });
    }
    Ok(out)
}
