//! Per-kernel timing at the shapes the default model actually uses.

use hallucitrace_core::tensor::{self, Tensor};
use std::time::Instant;

fn mk(rows: usize, cols: usize, scale: f32) -> Tensor<f32> {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|i| ((i % 97) as f32) * scale).collect(),
    )
    .unwrap()
}

fn time<F: FnMut()>(label: &str, flop: f64, mut f: F) {
    let reps = 50;
    let t = Instant::now();
    for _ in 0..reps {
        f();
    }
    let per = t.elapsed().as_secs_f64() / reps as f64;
    println!("{label}: {:.3}ms  ({:.2} GFLOP/s)", per * 1e3, flop / per / 1e9);
}

fn main() {
    let a = mk(10, 128, 1e-3);
    let w1 = mk(128, 512, 1e-3);
    let mid = mk(10, 512, 1e-3);
    let w2 = mk(512, 128, 1e-3);
    let unembed = mk(2500, 128, 1e-3);
    let g = mk(10, 2500, 1e-4);

    time("matmul 10x128x512", 2.0 * 10.0 * 128.0 * 512.0, || {
        let _ = tensor::matmul(&a, &w1).unwrap();
    });
    time("matmul 10x512x128", 2.0 * 10.0 * 512.0 * 128.0, || {
        let _ = tensor::matmul(&mid, &w2).unwrap();
    });
    time("matmul_nt 10x128 . 2500x128^T", 2.0 * 10.0 * 128.0 * 2500.0, || {
        let _ = tensor::matmul_nt(&a, &unembed).unwrap();
    });
    time("matmul g.unembed 10x2500x128", 2.0 * 10.0 * 2500.0 * 128.0, || {
        let _ = tensor::matmul(&g, &unembed).unwrap();
    });
    time("matmul_tn g^T.a -> 2500x128", 2.0 * 10.0 * 2500.0 * 128.0, || {
        let _ = tensor::matmul_tn(&g, &a).unwrap();
    });
    let big = mk(2500, 128, 1e-3);
    time("add 2500x128", 2500.0 * 128.0, || {
        let _ = tensor::add(&big, &unembed).unwrap();
    });
    time("gelu 10x512", 10.0 * 512.0, || {
        let _ = tensor::gelu_tensor(&mid);
    });
}
