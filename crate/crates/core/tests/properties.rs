//! Property tests for the intervention and projection invariants.

use hallucitrace_core::intervene::{EmbeddingNoise, InterventionSet, Site, SiteKind};
use hallucitrace_core::model::{ModelConfig, Transformer};
use hallucitrace_core::tensor::{self, Tensor};
use proptest::prelude::*;

fn tiny_model() -> Transformer<f64> {
    Transformer::init(ModelConfig::new(2, 8, 2, 12, 8, 51).unwrap())
}

fn site_strategy(seq_len: usize) -> impl Strategy<Value = Site> {
    (0usize..3, 1usize..=2, 0usize..seq_len).prop_map(|(k, layer, position)| Site {
        kind: SiteKind::ALL[k],
        layer,
        position,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn softmax_rows_are_distributions_preserving_argmax(
        rows in proptest::collection::vec(
            proptest::collection::vec(-30.0f64..30.0, 5),
            1..6,
        )
    ) {
        let m = rows.len();
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        let t = Tensor::new(vec![m, 5], data).unwrap();
        let s = tensor::softmax(&t, 1).unwrap();
        for i in 0..m {
            let sum: f64 = s.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert_eq!(tensor::argmax(s.row(i)), tensor::argmax(t.row(i)));
        }
    }

    #[test]
    fn independent_patches_commute(
        s1 in site_strategy(4),
        s2 in site_strategy(4),
        v1 in proptest::collection::vec(-1.0f64..1.0, 8),
        v2 in proptest::collection::vec(-1.0f64..1.0, 8),
    ) {
        prop_assume!(s1 != s2);
        let model = tiny_model();
        let tokens = [1usize, 5, 2, 9];
        let t1 = Tensor::new(vec![8], v1).unwrap();
        let t2 = Tensor::new(vec![8], v2).unwrap();

        let mut a = InterventionSet::new();
        a.add_patch(s1, t1.clone()).unwrap();
        a.add_patch(s2, t2.clone()).unwrap();
        let mut b = InterventionSet::new();
        b.add_patch(s2, t2).unwrap();
        b.add_patch(s1, t1).unwrap();

        let la = model.forward(&tokens, &a, false).unwrap().logits;
        let lb = model.forward(&tokens, &b, false).unwrap().logits;
        prop_assert_eq!(la, lb);
    }

    #[test]
    fn patches_never_change_earlier_positions(site in site_strategy(4)) {
        let model = tiny_model();
        let tokens = [3usize, 7, 1, 4];
        let mut set = InterventionSet::new();
        set.add_patch(site, Tensor::new(vec![8], vec![0.25; 8]).unwrap()).unwrap();
        let clean = model.forward(&tokens, &InterventionSet::new(), false).unwrap().logits;
        let patched = model.forward(&tokens, &set, false).unwrap().logits;
        for i in 0..site.position {
            prop_assert_eq!(clean.row(i), patched.row(i), "position {}", i);
        }
    }

    #[test]
    fn noise_with_same_seed_is_identical_and_scoped(
        seed in 0u64..1_000_000,
        position in 0usize..4,
    ) {
        let model = tiny_model();
        let tokens = [2usize, 8, 5, 11];
        let mut set = InterventionSet::new();
        set.set_noise(EmbeddingNoise { positions: vec![position], sigma: 0.7, seed }).unwrap();
        let a = model.forward(&tokens, &set, false).unwrap().logits;
        let b = model.forward(&tokens, &set, false).unwrap().logits;
        prop_assert_eq!(&a, &b);
        let clean = model.forward(&tokens, &InterventionSet::new(), false).unwrap().logits;
        for i in 0..position {
            prop_assert_eq!(clean.row(i), a.row(i));
        }
    }

    #[test]
    fn esp_scales_linearly(z in proptest::collection::vec(-2.0f64..2.0, 8), alpha in -3.0f64..3.0) {
        let model = tiny_model();
        let lens = hallucitrace_core::lens::Lens::new(&model);
        let scaled: Vec<f64> = z.iter().map(|v| v * alpha).collect();
        let a = lens.esp(&scaled, 3);
        let b = alpha * lens.esp(&z, 3);
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
    }
}

#[test]
fn query_order_never_changes_aie() {
    use hallucitrace_core::causal::{
        average_indirect_effects, HallucinationQuery, IeGrid,
    };
    let mk_query = |id: usize| {
        HallucinationQuery::new(format!("q{id}"), vec![1, 2, 3, 6], 0, 1, 4, 5).unwrap()
    };
    let mut traced = Vec::new();
    for i in 0..6 {
        let mut g = IeGrid::zeros(2, 4);
        for (k, kind) in SiteKind::ALL.iter().enumerate() {
            for layer in 1..=2 {
                for pos in 0..4 {
                    g.set(*kind, layer, pos, (i * 7 + k + layer * 3 + pos) as f64 * 0.1);
                }
            }
        }
        traced.push((mk_query(i), g));
    }
    let a = average_indirect_effects(&traced, 2).unwrap();
    traced.reverse();
    let b = average_indirect_effects(&traced, 2).unwrap();
    for (key, cell) in &a.cells {
        let other = b.cells[key];
        assert_eq!(cell.mean, other.mean);
        assert_eq!(cell.count, other.count);
    }
}
