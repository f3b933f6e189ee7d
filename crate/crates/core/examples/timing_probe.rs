//! Rough single-core timing of the hot paths at the default model scale.

use hallucitrace_core::intervene::InterventionSet;
use hallucitrace_core::model::{ModelConfig, Transformer};
use hallucitrace_core::train::lm_example_grads;
use std::time::Instant;

fn main() {
    let cfg = ModelConfig::new(8, 128, 4, 2500, 96, 1).unwrap();
    let model = Transformer::<f32>::init(cfg);
    let tokens: Vec<usize> = (0..10).map(|i| (i * 37) % 2500).collect();

    let t = Instant::now();
    for _ in 0..20 {
        let _ = model.forward(&tokens, &InterventionSet::new(), false).unwrap();
    }
    println!("forward: {:?}/pass", t.elapsed() / 20);

    let t = Instant::now();
    for _ in 0..20 {
        let _ = lm_example_grads(&model, &tokens).unwrap();
    }
    println!("fwd+bwd: {:?}/pass", t.elapsed() / 20);
}
