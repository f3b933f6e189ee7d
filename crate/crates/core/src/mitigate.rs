//! Targeted repair of wrong answers by fine-tuning against intermediate
//! projections: boost the true answer in selected MLP outputs and suppress
//! the wrong answer in selected attention outputs, combined with plain
//! next-token NLL on the corrected sequence.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{evaluate_queries, DatasetError, EvalSettings, QueryCandidate, QueryLabel, World};
use crate::model::{ModelError, Transformer, VocabError, Vocabulary};
use crate::num::Scalar;
use crate::rng::{rng_for_indexed, stream};
use crate::tape::{NodeId, TapeError};
use crate::tensor::TensorError;
use crate::train::{parallel_batch_grads, ExampleGrads, Optimizer, OptimizerKind};

#[derive(Debug, Error)]
pub enum MitigateError {
    #[error("both projection layer sets are empty")]
    EmptyLayerSets,
    #[error("layer {layer} out of range 1..={n_layers}")]
    LayerOutOfRange { layer: usize, n_layers: usize },
    #[error("no training examples")]
    EmptyExamples,
    #[error("empty evaluation set")]
    EmptyEvalSet,
    #[error("example {id}: {reason}")]
    BadExample { id: String, reason: String },
    #[error("fine-tuning diverged at step {step}; weights restored to the last finite state")]
    Diverged { step: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Six layers centered just past 3/4 of the depth, clamped into range; the
/// window that covers the layers writing most answer information.
pub fn default_layer_window(n_layers: usize) -> Vec<usize> {
    let hi = ((0.75 * n_layers as f64).round() as usize + 3).min(n_layers);
    let lo = hi.saturating_sub(5).max(1);
    (lo..=hi).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhmConfig {
    /// layers whose MLP outputs get the true-answer boost (empty = default
    /// window)
    pub layers_mlp: Vec<usize>,
    /// layers whose attention outputs get the wrong-answer suppression
    pub layers_attn: Vec<usize>,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for MhmConfig {
    fn default() -> Self {
        Self {
            layers_mlp: Vec::new(),
            layers_attn: Vec::new(),
            lambda: 1.0,
            lr: 0.05,
            epochs: 8,
            batch_size: 8,
        }
    }
}

impl MhmConfig {
    pub fn resolved_layers(&self, n_layers: usize) -> Result<(Vec<usize>, Vec<usize>), MitigateError> {
        let resolve = |set: &Vec<usize>| -> Result<Vec<usize>, MitigateError> {
            if set.is_empty() {
                return Ok(default_layer_window(n_layers));
            }
            for &l in set {
                if l == 0 || l > n_layers {
                    return Err(MitigateError::LayerOutOfRange { layer: l, n_layers });
                }
            }
            Ok(set.clone())
        };
        let mlp = resolve(&self.layers_mlp)?;
        let attn = resolve(&self.layers_attn)?;
        if mlp.is_empty() && attn.is_empty() {
            return Err(MitigateError::EmptyLayerSets);
        }
        Ok((mlp, attn))
    }
}

/// One repair example: a question the model answers wrongly, its true answer
/// token and the wrongly predicted token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainExample {
    pub id: String,
    pub x: Vec<usize>,
    pub y: usize,
    pub y_prime: usize,
}

impl TrainExample {
    pub fn new(id: String, x: Vec<usize>, y: usize, y_prime: usize) -> Result<Self, MitigateError> {
        if y == y_prime {
            return Err(MitigateError::BadExample {
                id,
                reason: "true and wrong answer coincide".into(),
            });
        }
        if x.is_empty() {
            return Err(MitigateError::BadExample {
                id,
                reason: "empty question".into(),
            });
        }
        Ok(Self { id, x, y, y_prime })
    }
}

/// The repair objective given intermediate log-probabilities:
/// -sum log p_m(y) - sum [log p_a(y) - log p_a(y')].
pub fn mhm_objective(
    mlp_logp_true: &[f64],
    attn_logp_true: &[f64],
    attn_logp_pred: &[f64],
) -> f64 {
    let m: f64 = mlp_logp_true.iter().sum();
    let a: f64 = attn_logp_true
        .iter()
        .zip(attn_logp_pred.iter())
        .map(|(t, p)| t - p)
        .sum();
    -m - a
}

struct LossNodes {
    nll: NodeId,
    mhm: NodeId,
    combined: NodeId,
}

/// Build the full loss graph on one tape. The forward runs on [x; y]; the
/// projection terms read the intermediate outputs at the last question
/// position (identical to an x-only pass by causality).
fn combined_loss_taped<F: Scalar>(
    model: &Transformer<F>,
    ex: &TrainExample,
    cfg: &MhmConfig,
) -> Result<(crate::model::TapedForward<F>, LossNodes), MitigateError> {
    let (layers_mlp, layers_attn) = cfg.resolved_layers(model.cfg.n_layers)?;
    let mut seq = ex.x.clone();
    seq.push(ex.y);
    let mut run = model.forward_taped(&seq, &crate::intervene::InterventionSet::new())?;
    let targets: Vec<(usize, usize)> = (0..seq.len() - 1).map(|i| (i, seq[i + 1])).collect();
    let anchor = ex.x.len() - 1;

    let tape = &mut run.tape;
    let nll = tape.seq_nll(run.logits, &targets)?;

    let w = &model.weights;
    let leaf = |name: &str| run.param_leaves[w.position(name).expect("known parameter")];
    let gain = leaf("ln_f.gain");
    let bias = leaf("ln_f.bias");
    let unembed = leaf("unembed");
    let eps = F::of_f64(model.cfg.layer_norm_eps);

    let lens_logp = |tape: &mut crate::tape::Tape<F>,
                         state: NodeId,
                         token: usize|
     -> Result<NodeId, MitigateError> {
        let row = tape.row_slice(state, anchor)?;
        let normed = tape.layer_norm(row, gain, bias, eps)?;
        let logits = tape.matmul_nt(normed, unembed)?;
        Ok(tape.log_softmax_pick(logits, token)?)
    };

    let mut terms: Vec<NodeId> = Vec::new();
    for &l in &layers_mlp {
        let t = lens_logp(tape, run.mlp_outs[l - 1], ex.y)?;
        terms.push(t);
    }
    for &l in &layers_attn {
        let t_true = lens_logp(tape, run.attn_outs[l - 1], ex.y)?;
        let t_pred = lens_logp(tape, run.attn_outs[l - 1], ex.y_prime)?;
        let diff = tape.sub(t_true, t_pred)?;
        terms.push(diff);
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    let mhm = tape.scale(acc, -F::one());
    let scaled = tape.scale(mhm, F::of_f64(cfg.lambda));
    let combined = tape.add(nll, scaled)?;

    Ok((run, LossNodes { nll, mhm, combined }))
}

/// Value of the projection-repair loss alone (forward on the question only).
pub fn mhm_loss<F: Scalar>(
    model: &Transformer<F>,
    ex: &TrainExample,
    cfg: &MhmConfig,
) -> Result<f64, MitigateError> {
    // the [x; y] pass reads the same states as an x-only pass at the anchor
    let (run, nodes) = combined_loss_taped(model, ex, cfg)?;
    Ok(run.tape.value(nodes.mhm).item().as_f64())
}

/// Value of NLL([x; y]) + lambda * repair loss.
pub fn combined_loss<F: Scalar>(
    model: &Transformer<F>,
    ex: &TrainExample,
    cfg: &MhmConfig,
) -> Result<(f64, f64, f64), MitigateError> {
    let (run, nodes) = combined_loss_taped(model, ex, cfg)?;
    Ok((
        run.tape.value(nodes.nll).item().as_f64(),
        run.tape.value(nodes.mhm).item().as_f64(),
        run.tape.value(nodes.combined).item().as_f64(),
    ))
}

fn example_grads<F: Scalar>(
    model: &Transformer<F>,
    ex: &TrainExample,
    cfg: &MhmConfig,
) -> Result<ExampleGrads<F>, MitigateError> {
    let (run, nodes) = combined_loss_taped(model, ex, cfg)?;
    let grads = run.tape.backward(nodes.combined)?;
    let per_param = run
        .param_leaves
        .iter()
        .map(|&leaf| grads.get(leaf).cloned())
        .collect();
    Ok(ExampleGrads {
        per_param,
        losses: vec![
            run.tape.value(nodes.nll).item().as_f64(),
            run.tape.value(nodes.mhm).item().as_f64(),
            run.tape.value(nodes.combined).item().as_f64(),
        ],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MitigationStep {
    pub step: u64,
    pub nll: f64,
    pub mhm: f64,
    pub combined: f64,
}

/// Plain-SGD fine-tuning loop on the combined objective. Deterministic batch
/// order given the seed. On a non-finite loss the weights roll back to the
/// last finite state and the run aborts.
pub fn train_mhm<F: Scalar>(
    model: &mut Transformer<F>,
    examples: &[TrainExample],
    cfg: &MhmConfig,
    seed: u64,
) -> Result<Vec<MitigationStep>, MitigateError> {
    if examples.is_empty() {
        return Err(MitigateError::EmptyExamples);
    }
    cfg.resolved_layers(model.cfg.n_layers)?;
    let n_params = model.weights.params().len();
    let mut optimizer = Optimizer::new(OptimizerKind::Sgd, cfg.lr, &model.weights);
    let mut log = Vec::new();
    let mut step: u64 = 0;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut rng = rng_for_indexed(seed, stream::MITIGATE, epoch as u64);
        order.shuffle(&mut rng);
        for batch_ids in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainExample> = batch_ids.iter().map(|&i| &examples[i]).collect();
            let last_good = model.weights.clone();
            let (grads, losses) =
                parallel_batch_grads(&batch, n_params, 3, |ex| example_grads(model, ex, cfg))?;
            let n = batch.len() as f64;
            let record = MitigationStep {
                step: step + 1,
                nll: losses[0] / n,
                mhm: losses[1] / n,
                combined: losses[2] / n,
            };
            if !record.combined.is_finite() {
                model.weights = last_good;
                return Err(MitigateError::Diverged { step: step + 1 });
            }
            for (i, g) in grads.into_iter().enumerate() {
                if let Some(g) = g {
                    model.weights.params_mut()[i].accumulate_grad(&g);
                }
            }
            optimizer.step(&mut model.weights, 1.0 / n, None);
            step += 1;
            log.push(record);
        }
    }
    Ok(log)
}

/// The ablation baseline: the identical loop with lambda = 0.
pub fn sft_baseline<F: Scalar>(
    model: &mut Transformer<F>,
    examples: &[TrainExample],
    cfg: &MhmConfig,
    seed: u64,
) -> Result<Vec<MitigationStep>, MitigateError> {
    let sft_cfg = MhmConfig {
        lambda: 0.0,
        ..cfg.clone()
    };
    train_mhm(model, examples, &sft_cfg, seed)
}

/// Few-shot prompt: "Question: {q} . Answer: {a} ." per exemplar, then the
/// query question. Rendered at the token level (the period is its own
/// token), so the result always detokenizes to the documented template.
pub fn icl_prompt(
    vocab: &Vocabulary,
    exemplars: &[(Vec<usize>, usize)],
    question: &[usize],
) -> Result<Vec<usize>, MitigateError> {
    let q_tok = vocab.id("Question:")?;
    let a_tok = vocab.id("Answer:")?;
    let period = vocab.id(".")?;
    let mut out = Vec::new();
    for (q, a) in exemplars {
        out.push(q_tok);
        out.extend_from_slice(q);
        out.push(period);
        out.push(a_tok);
        out.push(*a);
        out.push(period);
    }
    out.push(q_tok);
    out.extend_from_slice(question);
    out.push(period);
    out.push(a_tok);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MitigationEvalResult {
    /// accuracy on the paraphrase set
    pub effectiveness: f64,
    /// retained accuracy on the originally-correct set
    pub specificity: f64,
}

fn factual_fraction<F: Scalar>(
    model: &Transformer<F>,
    world: &World,
    queries: &[QueryCandidate],
    settings: &EvalSettings,
) -> Result<f64, MitigateError> {
    if queries.is_empty() {
        return Err(MitigateError::EmptyEvalSet);
    }
    let outcomes = evaluate_queries(model, world, queries, settings)?;
    let factual = outcomes
        .iter()
        .filter(|o| o.label == QueryLabel::Factual)
        .count();
    Ok(factual as f64 / queries.len() as f64)
}

/// Post-repair accuracy on the paraphrase set (effectiveness) and on the
/// originally-correct set (specificity), both under the `after` weights.
pub fn evaluate_mitigation<F: Scalar>(
    _before: &Transformer<F>,
    after: &Transformer<F>,
    world: &World,
    paraphrase_set: &[QueryCandidate],
    correct_set: &[QueryCandidate],
    settings: &EvalSettings,
) -> Result<MitigationEvalResult, MitigateError> {
    Ok(MitigationEvalResult {
        effectiveness: factual_fraction(after, world, paraphrase_set, settings)?,
        specificity: factual_fraction(after, world, correct_set, settings)?,
    })
}

/// Accuracy of the few-shot prompting baseline on a query set. Exemplars are
/// dropped from the front when a prompt would exceed the context window.
pub fn evaluate_icl<F: Scalar>(
    model: &Transformer<F>,
    world: &World,
    exemplars: &[(Vec<usize>, usize)],
    queries: &[QueryCandidate],
    settings: &EvalSettings,
) -> Result<f64, MitigateError> {
    if queries.is_empty() {
        return Err(MitigateError::EmptyEvalSet);
    }
    let max_len = model.cfg.max_seq_len;
    let mut prompted = Vec::with_capacity(queries.len());
    for q in queries {
        let mut keep = exemplars.len();
        let tokens = loop {
            let t = icl_prompt(&world.vocab, &exemplars[exemplars.len() - keep..], &q.tokens)?;
            if t.len() <= max_len || keep == 0 {
                break t;
            }
            keep -= 1;
        };
        let mut q2 = q.clone();
        q2.tokens = tokens;
        prompted.push(q2);
    }
    factual_fraction(model, world, &prompted, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lens::Lens;
    use crate::model::ModelConfig;

    fn tiny_model(seed: u64) -> Transformer<f64> {
        Transformer::init(ModelConfig::new(2, 8, 2, 16, 16, seed).unwrap())
    }

    fn example() -> TrainExample {
        TrainExample::new("e0".into(), vec![1, 2, 3, 6], 4, 5).unwrap()
    }

    fn small_cfg() -> MhmConfig {
        MhmConfig {
            layers_mlp: vec![1, 2],
            layers_attn: vec![2],
            lambda: 1.0,
            lr: 0.1,
            epochs: 1,
            batch_size: 4,
        }
    }

    #[test]
    fn default_window_is_six_layers_around_three_quarters_depth() {
        assert_eq!(default_layer_window(8), vec![3, 4, 5, 6, 7, 8]);
        assert_eq!(default_layer_window(32), vec![22, 23, 24, 25, 26, 27]);
        assert_eq!(default_layer_window(2), vec![1, 2]);
    }

    #[test]
    fn objective_limit_cases() {
        // all projections already perfect: p_m(y) = 1 and p_a(y) = p_a(y')
        assert_eq!(mhm_objective(&[0.0, 0.0], &[-1.3], &[-1.3]), 0.0);
        // single MLP layer with p_m(y) = e^-1 and no attention term
        assert_eq!(mhm_objective(&[-1.0], &[], &[]), 1.0);
    }

    #[test]
    fn tape_loss_matches_lens_recomputation_oracle() {
        let model = tiny_model(3);
        let ex = example();
        let cfg = small_cfg();
        let got = mhm_loss(&model, &ex, &cfg).unwrap();

        // oracle: trace the question pass, project through the lens
        let out = model
            .forward(&ex.x, &crate::intervene::InterventionSet::new(), true)
            .unwrap();
        let trace = out.trace.unwrap();
        let lens = Lens::new(&model);
        let anchor = ex.x.len() - 1;
        let logp = |state: &[f64], token: usize| -> f64 {
            let dist = lens.logit_lens(state);
            dist.data()[token].ln()
        };
        let mlp: Vec<f64> = cfg
            .layers_mlp
            .iter()
            .map(|&l| logp(trace.m(l, anchor), ex.y))
            .collect();
        let attn_true: Vec<f64> = cfg
            .layers_attn
            .iter()
            .map(|&l| logp(trace.a(l, anchor), ex.y))
            .collect();
        let attn_pred: Vec<f64> = cfg
            .layers_attn
            .iter()
            .map(|&l| logp(trace.a(l, anchor), ex.y_prime))
            .collect();
        let want = mhm_objective(&mlp, &attn_true, &attn_pred);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn combined_loss_with_zero_lambda_is_exactly_nll() {
        let model = tiny_model(5);
        let ex = example();
        let cfg = MhmConfig {
            lambda: 0.0,
            ..small_cfg()
        };
        let (nll, _, combined) = combined_loss(&model, &ex, &cfg).unwrap();
        assert_eq!(nll, combined);
        // and with lambda, combined = nll + lambda * mhm
        let cfg1 = MhmConfig {
            lambda: 0.7,
            ..small_cfg()
        };
        let (nll1, mhm1, combined1) = combined_loss(&model, &ex, &cfg1).unwrap();
        assert!((combined1 - (nll1 + 0.7 * mhm1)).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let model = tiny_model(7);
        let ex = example();
        let cfg = small_cfg();
        let grads = example_grads(&model, &ex, &cfg).unwrap();
        // probe a few coordinates across distinct parameter kinds
        for (pi, raw) in [(0usize, 9usize), (5, 3), (20, 17), (2, 40)] {
            let ci = raw % model.weights.params()[pi].value.len();
            let analytic = grads.per_param[pi]
                .as_ref()
                .map(|t| t.data()[ci])
                .unwrap_or(0.0);
            let h = 1e-5;
            let eval = |delta: f64| {
                let mut m = model.clone();
                {
                    let p = &mut m.weights.params_mut()[pi];
                    let data = p.value.data_mut();
                    data[ci] += delta;
                }
                combined_loss(&m, &ex, &cfg).unwrap().2
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!(
                crate::num::rel_diff(analytic, fd, 1e-8) < 1e-6,
                "param {pi} coord {ci}: {analytic} vs {fd}"
            );
        }
    }

    #[test]
    fn empty_layer_sets_are_a_configuration_error() {
        let model = tiny_model(9);
        let cfg = MhmConfig {
            layers_mlp: vec![9],
            ..small_cfg()
        };
        assert!(matches!(
            mhm_loss(&model, &example(), &cfg),
            Err(MitigateError::LayerOutOfRange { .. })
        ));
    }

    #[test]
    fn zero_epochs_and_zero_lr_leave_weights_unchanged() {
        let mut model = tiny_model(11);
        let before = model.weights.clone();
        let cfg = MhmConfig {
            epochs: 0,
            ..small_cfg()
        };
        train_mhm(&mut model, &[example()], &cfg, 1).unwrap();
        assert!(model.weights.bit_equal(&before));
        let cfg = MhmConfig {
            lr: 0.0,
            epochs: 1,
            ..small_cfg()
        };
        train_mhm(&mut model, &[example()], &cfg, 1).unwrap();
        assert!(model.weights.bit_equal(&before));
    }

    #[test]
    fn sft_is_bit_identical_to_zero_lambda_and_differs_from_mhm() {
        let cfg = MhmConfig {
            epochs: 2,
            ..small_cfg()
        };
        let mut a = tiny_model(13);
        sft_baseline(&mut a, &[example()], &cfg, 5).unwrap();
        let mut b = tiny_model(13);
        train_mhm(
            &mut b,
            &[example()],
            &MhmConfig {
                lambda: 0.0,
                ..cfg.clone()
            },
            5,
        )
        .unwrap();
        assert!(a.weights.bit_equal(&b.weights));
        let mut c = tiny_model(13);
        train_mhm(&mut c, &[example()], &cfg, 5).unwrap();
        assert!(!a.weights.bit_equal(&c.weights));
    }

    #[test]
    fn single_example_overfit_drives_combined_loss_down() {
        let mut model = tiny_model(15);
        let ex = example();
        let cfg = MhmConfig {
            layers_mlp: vec![1, 2],
            layers_attn: vec![2],
            lambda: 1.0,
            lr: 0.05,
            epochs: 250,
            batch_size: 1,
        };
        let initial = combined_loss(&model, &ex, &cfg).unwrap().2;
        let log = train_mhm(&mut model, &[ex.clone()], &cfg, 3).unwrap();
        let final_loss = combined_loss(&model, &ex, &cfg).unwrap().2;
        assert!(
            final_loss < 0.1 * initial,
            "loss {initial} only reached {final_loss}"
        );
        assert_eq!(log.len(), 250);
    }

    #[test]
    fn icl_prompt_layout() {
        let words = [
            "Question:", "Answer:", ".", "what", "city", "Rome", "Pisa", "who",
        ];
        let vocab =
            Vocabulary::from_tokens(words.iter().map(|w| w.to_string()).collect()).unwrap();
        let q1 = vocab.tokenize("what city").unwrap();
        let a1 = vocab.id("Rome").unwrap();
        let x = vocab.tokenize("who").unwrap();
        // zero-shot: just the query wrapper
        let zero = icl_prompt(&vocab, &[], &x).unwrap();
        assert_eq!(vocab.detokenize(&zero).unwrap(), "Question: who . Answer:");
        // token count is the sum of the parts
        let one = icl_prompt(&vocab, &[(q1.clone(), a1)], &x).unwrap();
        assert_eq!(one.len(), (q1.len() + 5) + (x.len() + 3));
        assert_eq!(
            vocab.detokenize(&one).unwrap(),
            "Question: what city . Answer: Rome . Question: who . Answer:"
        );
    }

    #[test]
    fn identity_mitigation_keeps_specificity_at_one() {
        use crate::dataset::world::{generate_world, small_world_config};
        let world = generate_world(&small_world_config(41)).unwrap();
        let cfg = ModelConfig::new(2, 16, 2, world.vocab.len(), 32, 41).unwrap();
        let model = Transformer::<f32>::init(cfg);
        let queries = crate::dataset::build_query_set(&world).unwrap();
        let outcomes =
            evaluate_queries(&model, &world, &queries, &EvalSettings::default()).unwrap();
        let correct: Vec<QueryCandidate> = queries
            .iter()
            .zip(outcomes.iter())
            .filter(|(_, o)| o.label == QueryLabel::Factual)
            .map(|(q, _)| q.clone())
            .collect();
        if correct.is_empty() {
            return; // random model answered nothing; nothing to check
        }
        let result = evaluate_mitigation(
            &model,
            &model,
            &world,
            &correct,
            &correct,
            &EvalSettings::default(),
        )
        .unwrap();
        assert_eq!(result.specificity, 1.0);
        // oracle recount
        let recount = factual_fraction(&model, &world, &correct, &EvalSettings::default()).unwrap();
        assert_eq!(result.effectiveness, recount);
    }
}
