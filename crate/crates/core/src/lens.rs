//! What each component writes into the residual stream, read in two ways:
//!
//! - embedding-space projection (ESP): the raw inner product of an
//!   intermediate state with an unembedding row, approximating that state's
//!   contribution to the token's logit;
//! - vocabulary lens: softmax(E . LayerNorm(z)) through the final layer norm,
//!   giving a full distribution, token logit values and ranks.
//!
//! The two projections are deliberately kept separate: ESP never applies a
//! layer norm, the lens always does.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActivationTrace, ModelError, Transformer};
use crate::num::Scalar;
use crate::tensor::{self, Tensor};

#[derive(Debug, Error)]
pub enum LensError {
    #[error("attribute set is empty")]
    EmptyAttributeSet,
    #[error("no query groups with members")]
    NoGroups,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Query-group tags for profile aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupTag {
    Factual,
    EarlySite,
    LateSite,
}

impl GroupTag {
    pub const ALL: [GroupTag; 3] = [GroupTag::Factual, GroupTag::EarlySite, GroupTag::LateSite];

    pub fn label(self) -> &'static str {
        match self {
            GroupTag::Factual => "factual",
            GroupTag::EarlySite => "early_site",
            GroupTag::LateSite => "late_site",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.label() == s)
    }
}

/// Component kinds the projections read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LensKind {
    MlpOut,
    AttnOut,
}

impl LensKind {
    pub fn label(self) -> &'static str {
        match self {
            LensKind::MlpOut => "mlp_out",
            LensKind::AttnOut => "attn_out",
        }
    }
}

/// A prompt with the positions and answer the projections need.
#[derive(Debug, Clone)]
pub struct LensQuery {
    pub id: String,
    pub tokens: Vec<usize>,
    pub subject_last: usize,
    pub relation_end: usize,
    pub true_object: usize,
}

/// Raw inner product of a state with the unembedding row of `object`.
pub fn esp<F: Scalar>(z: &[F], unembed: &Tensor<F>, object: usize) -> f64 {
    tensor::dot_slices(z, unembed.row(object)).as_f64()
}

/// Per-query, per-layer projection values at the canonical read positions:
/// MLP outputs at the last subject token, attention outputs at the last
/// prompt token.
#[derive(Debug, Clone)]
pub struct EspLayers {
    pub mlp: Vec<f64>,
    pub attn: Vec<f64>,
}

/// Lens-space analogue of [`EspLayers`]: the true-object logit extracted by
/// MLPs (`i_m`) and the attention contrast against competing attributes
/// (`i_a`).
#[derive(Debug, Clone)]
pub struct LensLayers {
    pub i_m: Vec<f64>,
    pub i_a: Vec<f64>,
}

/// Minimum lens rank of the true object across layers.
#[derive(Debug, Clone, PartialEq)]
pub struct RankRecord {
    pub query_id: String,
    pub min_rank: usize,
    pub threshold: usize,
    pub within_threshold: bool,
}

/// Group/kind/layer mean projection values.
#[derive(Debug, Clone)]
pub struct EspProfile {
    pub group: GroupTag,
    pub kind: LensKind,
    pub per_layer_mean: Vec<f64>,
    pub count: usize,
}

/// One checkpoint's group summary: mean ESP over lower-half MLP layers and
/// upper-half attention layers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub group: GroupTag,
    pub lower_mlp_esp: f64,
    pub upper_attn_esp: f64,
}

/// Projection reader bound to one model.
pub struct Lens<'a, F: Scalar> {
    model: &'a Transformer<F>,
}

impl<'a, F: Scalar> Lens<'a, F> {
    pub fn new(model: &'a Transformer<F>) -> Self {
        Self { model }
    }

    fn unembed(&self) -> &Tensor<F> {
        &self.model.weights.get("unembed").value
    }

    /// E . LayerNorm(z) using the final layer-norm parameters; one logit per
    /// vocabulary entry.
    pub fn lens_logits(&self, z: &[F]) -> Vec<F> {
        let w = &self.model.weights;
        let z = Tensor::from_parts(vec![1, z.len()], z.to_vec());
        let normed = tensor::layer_norm(
            &z,
            &w.get("ln_f.gain").value,
            &w.get("ln_f.bias").value,
            F::of_f64(self.model.cfg.layer_norm_eps),
        )
        .expect("shape fixed by model");
        let logits = tensor::matmul_nt(&normed, self.unembed()).expect("shape fixed by model");
        logits.row(0).to_vec()
    }

    /// softmax(E . LayerNorm(z)): the lens distribution of a state.
    pub fn logit_lens(&self, z: &[F]) -> Tensor<F> {
        let logits = Tensor::from_parts(vec![self.model.cfg.vocab_size], self.lens_logits(z));
        tensor::softmax(&logits, 0).expect("axis 0 valid")
    }

    pub fn esp(&self, z: &[F], object: usize) -> f64 {
        esp(z, self.unembed(), object)
    }

    /// Lens logit of `object` in the MLP output at the last subject token.
    pub fn mlp_enriched_info(
        &self,
        trace: &ActivationTrace<F>,
        layer: usize,
        subject_last: usize,
        object: usize,
    ) -> f64 {
        self.lens_logits(trace.m(layer, subject_last))[object].as_f64()
    }

    /// Tokens with the highest MLP-extracted lens logits at the last subject
    /// token, excluding `object`.
    pub fn top_attribute_tokens(
        &self,
        trace: &ActivationTrace<F>,
        layer: usize,
        subject_last: usize,
        object: usize,
        count: usize,
    ) -> Vec<usize> {
        let logits = self.lens_logits(trace.m(layer, subject_last));
        tensor::top_k(&logits, count + 1)
            .into_iter()
            .filter(|&t| t != object)
            .take(count)
            .collect()
    }

    /// Attention contrast: a_T . (e_object - mean of competing unembeddings).
    pub fn attn_extracted_info(
        &self,
        trace: &ActivationTrace<F>,
        layer: usize,
        relation_end: usize,
        object: usize,
        competitors: &[usize],
    ) -> Result<f64, LensError> {
        if competitors.is_empty() {
            return Err(LensError::EmptyAttributeSet);
        }
        let unembed = self.unembed();
        let d = unembed.cols();
        let mut target: Vec<f64> = unembed.row(object).iter().map(|v| v.as_f64()).collect();
        let inv = 1.0 / competitors.len() as f64;
        for &c in competitors {
            for (t, &e) in target.iter_mut().zip(unembed.row(c).iter()) {
                *t -= e.as_f64() * inv;
            }
        }
        let a = trace.a(layer, relation_end);
        let mut sum = 0.0;
        for j in 0..d {
            sum += a[j].as_f64() * target[j];
        }
        Ok(sum)
    }

    /// Minimum (over layers) 1-based rank of the true object in the lens
    /// distribution of the last-subject-token MLP outputs. `threshold_frac`
    /// of the vocabulary (floored) is the pass cutoff.
    pub fn min_object_rank(
        &self,
        query_id: &str,
        trace: &ActivationTrace<F>,
        subject_last: usize,
        object: usize,
        threshold_frac: f64,
    ) -> RankRecord {
        let mut min_rank = usize::MAX;
        for layer in 1..=trace.n_layers() {
            let logits = self.lens_logits(trace.m(layer, subject_last));
            min_rank = min_rank.min(tensor::rank_of(&logits, object));
        }
        let threshold = (threshold_frac * self.model.cfg.vocab_size as f64).floor() as usize;
        RankRecord {
            query_id: query_id.to_string(),
            min_rank,
            threshold,
            within_threshold: min_rank <= threshold,
        }
    }

    /// Per-layer ESP values of the true object at the canonical positions.
    pub fn esp_layers(&self, trace: &ActivationTrace<F>, q: &LensQuery) -> EspLayers {
        let layers = trace.n_layers();
        EspLayers {
            mlp: (1..=layers)
                .map(|l| self.esp(trace.m(l, q.subject_last), q.true_object))
                .collect(),
            attn: (1..=layers)
                .map(|l| self.esp(trace.a(l, q.relation_end), q.true_object))
                .collect(),
        }
    }

    /// Per-layer lens metrics of the true object (`i_m` at the last subject
    /// token, `i_a` contrast at the last prompt token).
    pub fn lens_layers(
        &self,
        trace: &ActivationTrace<F>,
        q: &LensQuery,
        top_attributes: usize,
    ) -> Result<LensLayers, LensError> {
        let layers = trace.n_layers();
        let mut i_m = Vec::with_capacity(layers);
        let mut i_a = Vec::with_capacity(layers);
        for l in 1..=layers {
            i_m.push(self.mlp_enriched_info(trace, l, q.subject_last, q.true_object));
            let competitors =
                self.top_attribute_tokens(trace, l, q.subject_last, q.true_object, top_attributes);
            i_a.push(self.attn_extracted_info(
                trace,
                l,
                q.relation_end,
                q.true_object,
                &competitors,
            )?);
        }
        Ok(LensLayers { i_m, i_a })
    }
}

/// Mean per-layer ESP per (group, kind) over per-query values. Groups with
/// no members are omitted and reported back.
pub fn group_esp_profile(
    samples: &[(GroupTag, EspLayers)],
) -> Result<(Vec<EspProfile>, Vec<GroupTag>), LensError> {
    if samples.is_empty() {
        return Err(LensError::NoGroups);
    }
    let layers = samples[0].1.mlp.len();
    let mut profiles = Vec::new();
    let mut empty = Vec::new();
    for group in GroupTag::ALL {
        let members: Vec<&EspLayers> = samples
            .iter()
            .filter(|(g, _)| *g == group)
            .map(|(_, v)| v)
            .collect();
        if members.is_empty() {
            empty.push(group);
            continue;
        }
        for kind in [LensKind::MlpOut, LensKind::AttnOut] {
            let mut per_layer = vec![0.0; layers];
            for m in &members {
                let vals = match kind {
                    LensKind::MlpOut => &m.mlp,
                    LensKind::AttnOut => &m.attn,
                };
                for (acc, v) in per_layer.iter_mut().zip(vals.iter()) {
                    *acc += v;
                }
            }
            for v in per_layer.iter_mut() {
                *v /= members.len() as f64;
            }
            profiles.push(EspProfile {
                group,
                kind,
                per_layer_mean: per_layer,
                count: members.len(),
            });
        }
    }
    Ok((profiles, empty))
}

/// Reduce one model's ESP values to the two trajectory summaries: mean over
/// MLP layers 1..L/2 at the subject, mean over attention layers L/2+1..L at
/// the prompt end.
pub fn trajectory_summary(esp: &EspLayers) -> (f64, f64) {
    let l = esp.mlp.len();
    let half = l / 2;
    let lower_mlp = esp.mlp[..half].iter().sum::<f64>() / half as f64;
    let upper_attn = esp.attn[half..].iter().sum::<f64>() / (l - half) as f64;
    (lower_mlp, upper_attn)
}

/// Sweep stored checkpoints: per checkpoint and group, the mean trajectory
/// summaries over that group's queries. Unreadable checkpoints are skipped
/// and reported as warnings.
pub fn checkpoint_trajectory<F: Scalar>(
    run_dir: &std::path::Path,
    groups: &[(GroupTag, Vec<LensQuery>)],
) -> Result<(Vec<TrajectoryPoint>, Vec<String>), LensError> {
    use crate::intervene::InterventionSet;

    let manifest = crate::model::io::read_run_manifest(run_dir)
        .map_err(|e| LensError::Model(ModelError::WeightIo(e)))?;
    let mut points = Vec::new();
    let mut warnings = Vec::new();
    for (step, path) in manifest {
        let model = match Transformer::<F>::load(&path) {
            Ok(m) => m,
            Err(e) => {
                warnings.push(format!("skipping checkpoint {}: {e}", path.display()));
                continue;
            }
        };
        let lens = Lens::new(&model);
        for (group, queries) in groups {
            if queries.is_empty() {
                continue;
            }
            let mut sum_mlp = 0.0;
            let mut sum_attn = 0.0;
            for q in queries {
                let out = model.forward(&q.tokens, &InterventionSet::new(), true)?;
                let esp = lens.esp_layers(&out.trace.expect("capture"), q);
                let (lo, hi) = trajectory_summary(&esp);
                sum_mlp += lo;
                sum_attn += hi;
            }
            points.push(TrajectoryPoint {
                step,
                group: *group,
                lower_mlp_esp: sum_mlp / queries.len() as f64,
                upper_attn_esp: sum_attn / queries.len() as f64,
            });
        }
    }
    Ok((points, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intervene::InterventionSet;
    use crate::model::ModelConfig;

    fn tiny_model() -> Transformer<f64> {
        Transformer::init(ModelConfig::new(2, 8, 2, 12, 8, 31).unwrap())
    }

    fn lens_query(tokens: Vec<usize>) -> LensQuery {
        LensQuery {
            id: "q".into(),
            tokens,
            subject_last: 1,
            relation_end: 3,
            true_object: 4,
        }
    }

    #[test]
    fn esp_of_own_unembedding_row_is_squared_norm() {
        let model = tiny_model();
        let lens = Lens::new(&model);
        let e4: Vec<f64> = model.weights.get("unembed").value.row(4).to_vec();
        let want: f64 = e4.iter().map(|v| v * v).sum();
        assert!((lens.esp(&e4, 4) - want).abs() < 1e-12);
    }

    #[test]
    fn esp_of_orthogonal_vector_is_zero_and_esp_is_bilinear() {
        let model = tiny_model();
        let lens = Lens::new(&model);
        let e = model.weights.get("unembed").value.clone();
        // Gram-Schmidt a vector against row 4
        let r4: Vec<f64> = e.row(4).to_vec();
        let norm2: f64 = r4.iter().map(|v| v * v).sum();
        let mut z: Vec<f64> = e.row(5).to_vec();
        let proj: f64 = z.iter().zip(r4.iter()).map(|(a, b)| a * b).sum::<f64>() / norm2;
        for (zi, ri) in z.iter_mut().zip(r4.iter()) {
            *zi -= proj * ri;
        }
        assert!(lens.esp(&z, 4).abs() < 1e-9);
        let scaled: Vec<f64> = z.iter().map(|v| v * 3.5).collect();
        assert!((lens.esp(&scaled, 5) - 3.5 * lens.esp(&z, 5)).abs() < 1e-9);
    }

    #[test]
    fn esp_matches_naive_loop_oracle() {
        let model = tiny_model();
        let lens = Lens::new(&model);
        let z: Vec<f64> = (0..8).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let row = model.weights.get("unembed").value.row(7).to_vec();
        let mut want = 0.0;
        for j in 0..8 {
            want += z[j] * row[j];
        }
        assert!((lens.esp(&z, 7) - want).abs() <= 1e-9);
    }

    #[test]
    fn logit_lens_is_a_distribution_with_correct_top5() {
        let model = tiny_model();
        let lens = Lens::new(&model);
        let z: Vec<f64> = (0..8).map(|i| (i as f64 - 3.0) * 0.4).collect();
        let dist = lens.logit_lens(&z);
        let sum: f64 = dist.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        // rank of argmax is 1 by definition
        let am = tensor::argmax(dist.data());
        assert_eq!(tensor::rank_of(dist.data(), am), 1);
        // top-5 by probability equals full sort of lens logits
        let logits = lens.lens_logits(&z);
        let want = tensor::top_k(&logits, 5);
        let got = tensor::top_k(dist.data(), 5);
        assert_eq!(want, got);
    }

    #[test]
    fn mlp_enriched_info_matches_manual_projection() {
        let model = tiny_model();
        let lens = Lens::new(&model);
        let out = model
            .forward(&[1, 2, 3, 6], &InterventionSet::new(), true)
            .unwrap();
        let trace = out.trace.unwrap();
        let got = lens.mlp_enriched_info(&trace, 2, 1, 4);
        // oracle: layer norm by formula, then dot with unembed row
        let m = trace.m(2, 1);
        let d = 8usize;
        let mean: f64 = m.iter().sum::<f64>() / d as f64;
        let var: f64 = m.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let gain = model.weights.get("ln_f.gain").value.clone();
        let bias = model.weights.get("ln_f.bias").value.clone();
        let e4 = model.weights.get("unembed").value.row(4).to_vec();
        let eps = model.cfg.layer_norm_eps;
        let mut want = 0.0;
        for j in 0..d {
            let normed =
                (m[j] - mean) / (var + eps).sqrt() * gain.data()[j] + bias.data()[j];
            want += normed * e4[j];
        }
        assert!((got - want).abs() <= 1e-6);
    }

    #[test]
    fn attn_extracted_info_edge_cases() {
        let model = tiny_model();
        let lens = Lens::new(&model);
        let out = model
            .forward(&[1, 2, 3, 6], &InterventionSet::new(), true)
            .unwrap();
        let trace = out.trace.unwrap();
        // |O'| = 1: a . (e_o - e_c)
        let got = lens.attn_extracted_info(&trace, 2, 3, 4, &[7]).unwrap();
        let a = trace.a(2, 3);
        let e = &model.weights.get("unembed").value;
        let mut want = 0.0;
        for j in 0..8 {
            want += a[j] * (e.row(4)[j] - e.row(7)[j]);
        }
        assert!((got - want).abs() <= 1e-6);
        // competitor set equal to {o}: e_o - mean == 0 -> projection 0
        let got = lens.attn_extracted_info(&trace, 2, 3, 4, &[4]).unwrap();
        assert!(got.abs() < 1e-12);
        // empty set is a domain error
        assert!(matches!(
            lens.attn_extracted_info(&trace, 2, 3, 4, &[]),
            Err(LensError::EmptyAttributeSet)
        ));
    }

    #[test]
    fn top_attribute_tokens_excludes_object_and_matches_sort() {
        let model = tiny_model();
        let lens = Lens::new(&model);
        let out = model
            .forward(&[1, 2, 3, 6], &InterventionSet::new(), true)
            .unwrap();
        let trace = out.trace.unwrap();
        let top = lens.top_attribute_tokens(&trace, 1, 1, 4, 5);
        assert_eq!(top.len(), 5);
        assert!(!top.contains(&4));
        let logits = lens.lens_logits(trace.m(1, 1));
        let full = tensor::top_k(&logits, 12);
        let want: Vec<usize> = full.into_iter().filter(|&t| t != 4).take(5).collect();
        assert_eq!(top, want);
    }

    #[test]
    fn min_object_rank_matches_brute_force_and_threshold() {
        let model = tiny_model();
        let lens = Lens::new(&model);
        let out = model
            .forward(&[1, 2, 3, 6], &InterventionSet::new(), true)
            .unwrap();
        let trace = out.trace.unwrap();
        let rec = lens.min_object_rank("q", &trace, 1, 4, 0.25);
        // brute force with a full per-layer sort
        let mut want = usize::MAX;
        for l in 1..=2 {
            let logits = lens.lens_logits(trace.m(l, 1));
            let order = tensor::top_k(&logits, 12);
            let pos = order.iter().position(|&t| t == 4).unwrap() + 1;
            want = want.min(pos);
        }
        assert_eq!(rec.min_rank, want);
        assert!(rec.min_rank >= 1 && rec.min_rank <= 12);
        assert_eq!(rec.threshold, 3); // floor(0.25 * 12)
        assert_eq!(rec.within_threshold, rec.min_rank <= 3);
    }

    #[test]
    fn rank_is_one_when_state_aligns_with_object_row() {
        // threshold example: |V| = 32000 at 1% cuts at rank 320
        assert_eq!((0.01f64 * 32000.0).floor() as usize, 320);
        let mut model = tiny_model();
        // make the object row dominate the vocabulary, then align the state
        // with it: the lens must put the object at rank 1
        {
            let unembed = &mut model.weights.get_mut("unembed").value;
            let data = unembed.data_mut();
            for v in data[4 * 8..5 * 8].iter_mut() {
                *v *= 100.0;
            }
        }
        let lens = Lens::new(&model);
        let out = model
            .forward(&[1, 2, 3, 6], &InterventionSet::new(), true)
            .unwrap();
        let mut trace = out.trace.unwrap();
        let e4: Vec<f64> = model
            .weights
            .get("unembed")
            .value
            .row(4)
            .iter()
            .map(|v| v * 1000.0)
            .collect();
        let mut m1 = trace.mlp_outs[0].data().to_vec();
        m1[8..16].copy_from_slice(&e4);
        trace.mlp_outs[0] = Tensor::new(vec![4, 8], m1).unwrap();
        let rec = lens.min_object_rank("q", &trace, 1, 4, 0.25);
        assert_eq!(rec.min_rank, 1);
    }

    #[test]
    fn group_profile_means_and_empty_groups() {
        let one = EspLayers {
            mlp: vec![1.0, 3.0],
            attn: vec![0.0, 2.0],
        };
        let two = EspLayers {
            mlp: vec![3.0, 5.0],
            attn: vec![2.0, 0.0],
        };
        let (profiles, empty) = group_esp_profile(&[
            (GroupTag::Factual, one.clone()),
            (GroupTag::Factual, two),
            (GroupTag::LateSite, one),
        ])
        .unwrap();
        assert_eq!(empty, vec![GroupTag::EarlySite]);
        let factual_mlp = profiles
            .iter()
            .find(|p| p.group == GroupTag::Factual && p.kind == LensKind::MlpOut)
            .unwrap();
        assert_eq!(factual_mlp.per_layer_mean, vec![2.0, 4.0]);
        assert_eq!(factual_mlp.count, 2);
        let late_attn = profiles
            .iter()
            .find(|p| p.group == GroupTag::LateSite && p.kind == LensKind::AttnOut)
            .unwrap();
        assert_eq!(late_attn.per_layer_mean, vec![0.0, 2.0]);
    }

    #[test]
    fn union_profile_is_count_weighted_mean_of_parts() {
        let mk = |v: f64| EspLayers {
            mlp: vec![v],
            attn: vec![-v],
        };
        let part_a = vec![(GroupTag::Factual, mk(1.0)), (GroupTag::Factual, mk(2.0))];
        let part_b = vec![(GroupTag::Factual, mk(7.0))];
        let union: Vec<_> = part_a.iter().cloned().chain(part_b.iter().cloned()).collect();
        let (pa, _) = group_esp_profile(&part_a).unwrap();
        let (pb, _) = group_esp_profile(&part_b).unwrap();
        let (pu, _) = group_esp_profile(&union).unwrap();
        let ma = pa.iter().find(|p| p.kind == LensKind::MlpOut).unwrap();
        let mb = pb.iter().find(|p| p.kind == LensKind::MlpOut).unwrap();
        let mu = pu.iter().find(|p| p.kind == LensKind::MlpOut).unwrap();
        let want =
            (ma.per_layer_mean[0] * 2.0 + mb.per_layer_mean[0]) / 3.0;
        assert!((mu.per_layer_mean[0] - want).abs() < 1e-12);
    }

    #[test]
    fn trajectory_over_identical_checkpoints_is_constant() {
        let dir = tempfile::tempdir().unwrap();
        let model = tiny_model();
        let model32 = model.cast::<f32>();
        crate::model::io::save_checkpoint(dir.path(), &[10], &model32.cfg, &model32.weights)
            .unwrap();
        crate::model::io::save_checkpoint(dir.path(), &[10, 20], &model32.cfg, &model32.weights)
            .unwrap();
        let q = lens_query(vec![1, 2, 3, 6]);
        let groups = vec![(GroupTag::Factual, vec![q])];
        let (points, warnings) = checkpoint_trajectory::<f32>(dir.path(), &groups).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(points.len(), 2);
        assert_eq!(points[0].lower_mlp_esp, points[1].lower_mlp_esp);
        assert_eq!(points[0].upper_attn_esp, points[1].upper_attn_esp);
        assert!(points[0].step < points[1].step);

        // single checkpoint equals the group_esp_profile reduction
        let m32 = Transformer::<f32>::load(&dir.path().join("step-000010.htw")).unwrap();
        let lens = Lens::new(&m32);
        let q = lens_query(vec![1, 2, 3, 6]);
        let out = m32.forward(&q.tokens, &InterventionSet::new(), true).unwrap();
        let esp = lens.esp_layers(&out.trace.unwrap(), &q);
        let (lo, hi) = trajectory_summary(&esp);
        assert!((points[0].lower_mlp_esp - lo).abs() < 1e-12);
        assert!((points[0].upper_attn_esp - hi).abs() < 1e-12);
    }

    #[test]
    fn unreadable_checkpoint_is_skipped_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let model = tiny_model().cast::<f32>();
        crate::model::io::save_checkpoint(dir.path(), &[5], &model.cfg, &model.weights).unwrap();
        crate::model::io::save_checkpoint(dir.path(), &[5, 15], &model.cfg, &model.weights)
            .unwrap();
        std::fs::write(dir.path().join("step-000005.htw"), b"garbage").unwrap();
        let q = lens_query(vec![1, 2, 3, 6]);
        let groups = vec![(GroupTag::Factual, vec![q])];
        let (points, warnings) = checkpoint_trajectory::<f32>(dir.path(), &groups).unwrap();
        assert_eq!(points.len(), 1);
        assert_eq!(points[0].step, 15);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("step-000005"));
    }
}
