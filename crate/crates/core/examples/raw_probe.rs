//! Raw-slice kernel variants to isolate abstraction overhead.

use std::time::Instant;

fn time<F: FnMut() -> f32>(label: &str, flop: f64, mut f: F) {
    let reps = 50;
    let t = Instant::now();
    let mut sink = 0.0;
    for _ in 0..reps {
        sink += f();
    }
    let per = t.elapsed().as_secs_f64() / reps as f64;
    println!(
        "{label}: {:.3}ms ({:.2} GFLOP/s) [{sink:.1}]",
        per * 1e3,
        flop / per / 1e9
    );
}

fn main() {
    tensor_compare::run();
    let m = 10usize;
    let k = 128usize;
    let n = 2500usize;
    let a: Vec<f32> = (0..m * k).map(|i| (i % 97) as f32 * 1e-3).collect();
    let b: Vec<f32> = (0..n * k).map(|i| (i % 89) as f32 * 1e-3).collect();

    // nt: serial dot per output
    time("raw nt serial-dot", 2.0 * (m * k * n) as f64, || {
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &b[j * k..(j + 1) * k];
                let mut s = 0.0f32;
                for kk in 0..k {
                    s += arow[kk] * brow[kk];
                }
                out[i * n + j] = s;
            }
        }
        out[0]
    });

    // nt: 8 independent accumulators
    time("raw nt 8-block", 2.0 * (m * k * n) as f64, || {
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let mut j = 0;
            while j + 8 <= n {
                let mut acc = [0.0f32; 8];
                for kk in 0..k {
                    let av = arow[kk];
                    for u in 0..8 {
                        acc[u] += av * b[(j + u) * k + kk];
                    }
                }
                out[i * n + j..i * n + j + 8].copy_from_slice(&acc);
                j += 8;
            }
        }
        out[0]
    });

    // tn with j-outer (current shape: g[10,2500]^T . a2[10,128])
    let g: Vec<f32> = (0..m * n).map(|i| (i % 83) as f32 * 1e-4).collect();
    let a2: Vec<f32> = (0..m * k).map(|i| (i % 79) as f32 * 1e-3).collect();
    time("raw tn j-outer", 2.0 * (m * k * n) as f64, || {
        let mut out = vec![0.0f32; n * k];
        for j in 0..n {
            let orow = &mut out[j * k..(j + 1) * k];
            for i in 0..m {
                let aij = g[i * n + j];
                let brow = &a2[i * k..(i + 1) * k];
                for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                    *o += aij * bv;
                }
            }
        }
        out[0]
    });

    // plain elementwise add at 2500x128
    let x: Vec<f32> = (0..n * k).map(|i| (i % 71) as f32).collect();
    time("raw add collect", (n * k) as f64, || {
        let out: Vec<f32> = x.iter().zip(b.iter()).map(|(p, q)| p + q).collect();
        out[0]
    });
    time("raw add prealloc", (n * k) as f64, || {
        let mut out = vec![0.0f32; n * k];
        for ((o, p), q) in out.iter_mut().zip(x.iter()).zip(b.iter()) {
            *o = p + q;
        }
        out[0]
    });
}

// appended: tensor-path comparison in the same binary
mod tensor_compare {
    use hallucitrace_core::tensor::{self, Tensor};
    use std::time::Instant;

    pub fn run() {
        let m = 10usize;
        let k = 128usize;
        let n = 2500usize;
        let g = Tensor::new(
            vec![m, n],
            (0..m * n).map(|i| (i % 83) as f32 * 1e-4).collect(),
        )
        .unwrap();
        let a2 = Tensor::new(
            vec![m, k],
            (0..m * k).map(|i| (i % 79) as f32 * 1e-3).collect(),
        )
        .unwrap();
        let reps = 50;
        let t = Instant::now();
        for _ in 0..reps {
            let _ = tensor::matmul_tn(&g, &a2).unwrap();
        }
        println!(
            "tensor tn same-binary: {:.3}ms",
            t.elapsed().as_secs_f64() / reps as f64 * 1e3
        );
        let x = Tensor::new(vec![n, k], vec![0.5f32; n * k]).unwrap();
        let y = Tensor::new(vec![n, k], vec![0.25f32; n * k]).unwrap();
        let t = Instant::now();
        for _ in 0..reps {
            let _ = tensor::add(&x, &y).unwrap();
        }
        println!(
            "tensor add same-binary: {:.3}ms",
            t.elapsed().as_secs_f64() / reps as f64 * 1e3
        );
    }
}
