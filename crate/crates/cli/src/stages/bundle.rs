//! Regenerate every derived report from the persisted per-query
//! intermediates and verify the results match the originals byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};

use hallucitrace_core::causal::{
    average_indirect_effects, relative_ie, HallucinationQuery, IeGrid, Mechanism,
};
use hallucitrace_core::intervene::SiteKind;
use hallucitrace_core::lens::{group_esp_profile, EspLayers, GroupTag};
use hallucitrace_core::manifestation::{manifestation_report, REFERENCE_EARLY, REFERENCE_LATE};

use crate::config::RunConfig;
use crate::paths::RunPaths;
use crate::report::{self, LabelRow, ManifestationRow, ProfileRow};

struct Regenerated {
    original: PathBuf,
    copy: PathBuf,
}

pub fn run(cfg: &RunConfig, paths: &RunPaths) -> Result<()> {
    let _ = super::echo_config(cfg, paths, "report-bundle")?;
    let world = super::load_world(paths)?;
    let bundle = paths.bundle_dir();
    crate::paths::ensure_dir(&bundle)?;

    let mut outputs: Vec<Regenerated> = Vec::new();

    // --- attribution heatmaps and labels from the per-query grids ---
    let (source_hash, _) = report::read_stamped(&paths.per_query_ie())?;
    let ie_rows = report::read_per_query_ie(&paths.per_query_ie())?;
    let grids = report::grids_from_ie_rows(&ie_rows)?;
    let hall_rows = report::read_hallucinations(&paths.hallucinations())?;
    let mut traced: Vec<(HallucinationQuery, IeGrid)> = Vec::new();
    for row in &hall_rows {
        if let Some(grid) = grids.get(&row.query_id) {
            traced.push((super::query_from_row(&world, row)?, grid.clone()));
        }
    }
    if !traced.is_empty() {
        let aie = average_indirect_effects(&traced, traced[0].1.n_layers)?;
        for &kind in &SiteKind::ALL {
            let out = bundle.join(format!("aie-{}.csv", kind.label()));
            report::write_aie_csv(&out, &source_hash, &aie, kind)?;
            outputs.push(Regenerated {
                original: paths.aie_csv(kind.label()),
                copy: out,
            });
        }
        let counts = bundle.join("aie-counts.json");
        report::write_aie_counts(&counts, &source_hash, &aie)?;
        outputs.push(Regenerated {
            original: paths.aie_counts(),
            copy: counts,
        });

        let kinds = cfg.tracing.resolved_kinds()?;
        let mut label_rows: Vec<LabelRow> = Vec::new();
        for (q, grid) in &traced {
            let label = relative_ie(grid, q, &kinds)?;
            label_rows.push(LabelRow {
                query_id: q.id.clone(),
                delta_ie: label.delta_ie,
                label: label.label,
            });
        }
        let (labels_hash, _) = report::read_stamped(&paths.labels())?;
        let out = bundle.join("labels.csv");
        report::write_labels(&out, &labels_hash, &label_rows)?;
        outputs.push(Regenerated {
            original: paths.labels(),
            copy: out,
        });
    }

    // --- projection profiles from the per-query values ---
    if paths.esp_per_query().exists() {
        let (esp_hash, _) = report::read_stamped(&paths.esp_per_query())?;
        let esp_rows = report::read_esp_per_query(&paths.esp_per_query())?;
        let mut samples: Vec<(GroupTag, EspLayers)> = Vec::new();
        let mut current: Option<(String, GroupTag, EspLayers)> = None;
        let mut lens_acc: BTreeMap<(GroupTag, String, usize), (f64, usize)> = BTreeMap::new();
        for r in &esp_rows {
            for (metric, value) in [("i_m", r.i_m), ("i_a", r.i_a)] {
                let e = lens_acc
                    .entry((r.group, metric.to_string(), r.layer))
                    .or_insert((0.0, 0));
                e.0 += value;
                e.1 += 1;
            }
            match &mut current {
                Some((qid, _, esp)) if *qid == r.query_id => {
                    esp.mlp.push(r.esp_mlp);
                    esp.attn.push(r.esp_attn);
                }
                _ => {
                    if let Some((_, tag, esp)) = current.take() {
                        samples.push((tag, esp));
                    }
                    current = Some((
                        r.query_id.clone(),
                        r.group,
                        EspLayers {
                            mlp: vec![r.esp_mlp],
                            attn: vec![r.esp_attn],
                        },
                    ));
                }
            }
        }
        if let Some((_, tag, esp)) = current.take() {
            samples.push((tag, esp));
        }
        let (profiles, _) = group_esp_profile(&samples)?;
        let mut profile_rows = Vec::new();
        for p in &profiles {
            for (i, mean) in p.per_layer_mean.iter().enumerate() {
                profile_rows.push(ProfileRow {
                    group: p.group,
                    metric: p.kind.label().to_string(),
                    layer: i + 1,
                    mean: *mean,
                    count: p.count,
                });
            }
        }
        let out = bundle.join("esp-profile.csv");
        report::write_profile_csv(&out, &esp_hash, &profile_rows)?;
        outputs.push(Regenerated {
            original: paths.esp_profile(),
            copy: out,
        });

        let lens_rows: Vec<ProfileRow> = lens_acc
            .into_iter()
            .map(|((group, metric, layer), (sum, n))| ProfileRow {
                group,
                metric,
                layer,
                mean: sum / n as f64,
                count: n,
            })
            .collect();
        let out = bundle.join("lens-profile.csv");
        report::write_profile_csv(&out, &esp_hash, &lens_rows)?;
        outputs.push(Regenerated {
            original: paths.lens_profile(),
            copy: out,
        });
    }

    // --- manifestation table from the per-query features ---
    if paths.features().exists() {
        let (feat_hash, _) = report::read_stamped(&paths.features())?;
        let feature_rows = report::read_features(&paths.features())?;
        let rows: Vec<(String, Mechanism, _)> = feature_rows
            .iter()
            .map(|r| (r.query_id.clone(), r.mechanism, r.features))
            .collect();
        let summary = manifestation_report(&rows);
        let mut table: Vec<ManifestationRow> = Vec::new();
        for (group, means) in [
            (Mechanism::EarlySite, &summary.early),
            (Mechanism::LateSite, &summary.late),
        ] {
            if let Some(m) = means {
                table.push(ManifestationRow {
                    source: "desk".into(),
                    group,
                    count: m.count,
                    features: m.features,
                });
            }
        }
        table.push(ManifestationRow {
            source: "reference".into(),
            group: Mechanism::EarlySite,
            count: 0,
            features: REFERENCE_EARLY,
        });
        table.push(ManifestationRow {
            source: "reference".into(),
            group: Mechanism::LateSite,
            count: 0,
            features: REFERENCE_LATE,
        });
        let out = bundle.join("manifestation.csv");
        report::write_manifestation_csv(&out, &feat_hash, &table)?;
        outputs.push(Regenerated {
            original: paths.manifestation(),
            copy: out,
        });
    }

    // --- byte comparison against the originals ---
    let mut mismatches = Vec::new();
    for r in &outputs {
        let same = files_equal(&r.original, &r.copy)?;
        println!(
            "report bundle: {} {}",
            if same { "reproduced" } else { "MISMATCH" },
            r.original.display()
        );
        if !same {
            mismatches.push(r.original.display().to_string());
        }
    }
    if !mismatches.is_empty() {
        bail!(
            "{} derived report(s) did not reproduce from intermediates: {}",
            mismatches.len(),
            mismatches.join(", ")
        );
    }
    println!("report bundle: {} files reproduced into {}", outputs.len(), bundle.display());
    Ok(())
}

fn files_equal(a: &Path, b: &Path) -> Result<bool> {
    Ok(std::fs::read(a)? == std::fs::read(b)?)
}
